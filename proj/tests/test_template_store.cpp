#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "log2cmd/template_store.hpp"

using namespace log2cmd;
namespace fs = std::filesystem;

namespace {
fs::path tmp_file(const char* name) {
    fs::path p = fs::temp_directory_path() / "log2cmd_ts_tests";
    fs::create_directories(p);
    return p / name;
}
}  // namespace

TEST_CASE("normalize_ws collapses runs and trims") {
    CHECK(normalize_ws("  a \t b\n") == "a b");
    CHECK(normalize_ws("") == "");
    CHECK(normalize_ws("x") == "x");
}

TEST_CASE("mask_line replaces variable fields with placeholders") {
    auto rules = MaskRuleSet::defaults();
    CHECK(mask_line("2023-08-17 09:15:02.123 proc02 INFO [req-9f8a7b6c-1234] Get "
                    "http://ctl01:8774/v2/servers",
                    rules) == "<TS> proc02 INFO [req-<ID>] Get <URL>");
    CHECK(mask_line("connect 10.0.0.1:8080 failed", rules) == "connect <IP> failed");
    CHECK(mask_line("listening on :8080", rules) == "listening on :<PORT>");
    CHECK(mask_line("read /var/log/messages now", rules) == "read <PATH> now");
    CHECK(mask_line("txn deadbeef0123 aborted", rules) == "txn <HEX> aborted");
    CHECK(mask_line("waited 1500 ms", rules) == "waited <NUM> ms");
    // short or letterless runs stay literal
    CHECK(mask_line("rc 42 case a1", rules) == "rc 42 case a1");
}

TEST_CASE("mask_line is idempotent") {
    auto rules = MaskRuleSet::defaults();
    const char* raws[] = {
        "2023-08-17 09:15:02.123 proc02 INFO [req-9f8a7b6c-1234] Get http://ctl01:8774/v2",
        "14:00:00 proc01 DEBUG [req-12345] accepted ( IPv4, 12345) server /var/lib/srv",
        "plain words only",
        "mixed 10.1.2.3 and /etc/hosts and 123456789",
    };
    for (const char* raw : raws) {
        std::string once = mask_line(raw, rules);
        CHECK(mask_line(once, rules) == once);
    }
}

TEST_CASE("assign_id hands out IDs in first-seen order from 1") {
    TemplateStore store;
    CHECK(store.assign_id("alpha") == 1);
    CHECK(store.assign_id("beta") == 2);
    CHECK(store.assign_id("alpha") == 1);
    CHECK(store.size() == 2);
    CHECK(store.lookup("beta") == 2);
    CHECK_FALSE(store.lookup("gamma").has_value());
    CHECK(store.text(1) == "alpha");
    CHECK_THROWS(store.text(0));
    CHECK_THROWS(store.text(3));
}

TEST_CASE("store save/load round trip") {
    TemplateStore store;
    store.assign_id("a b c");
    store.assign_id("d <NUM> e");
    fs::path p = tmp_file("store.tsv");
    store.save(p);
    TemplateStore back = TemplateStore::load(p);
    CHECK(back.size() == 2);
    CHECK(back.lookup("a b c") == 1);
    CHECK(back.lookup("d <NUM> e") == 2);
    // IDs keep working after reload
    CHECK(back.assign_id("new one") == 3);
}

TEST_CASE("store load reports the offending line") {
    fs::path p = tmp_file("bad_store.tsv");
    std::ofstream(p) << "1\tok line\nno tab here\n";
    CHECK_THROWS_WITH_AS(TemplateStore::load(p), doctest::Contains("line 2"), std::runtime_error);
}

TEST_CASE("encode_log grows the store; frozen encoding maps unknown to 0") {
    TemplateStore store;
    auto rules = MaskRuleSet::defaults();
    std::vector<std::string> raw = {"job 123456 started", "job 654321 started",
                                    "job 123456 finished"};
    LogSequence seq = encode_log(store, raw, rules);
    CHECK(seq.ids == std::vector<int>{1, 1, 2});
    CHECK(store.size() == 2);

    LogSequence frozen = encode_log_frozen(store, {"job 777777 started", "unseen template"},
                                           rules);
    CHECK(frozen.ids == std::vector<int>{1, 0});
    CHECK(store.size() == 2);
}

// log stream in the style of an OpenStack nova trace: request IDs differ per
// message but lines 4 and 6 share a template, so they share one ID; two
// unrelated lines in between give the ID sequence its gaps
TEST_CASE("request-ID noise collapses to shared template IDs") {
    auto rules = MaskRuleSet::defaults();
    // bare instance names (abc, xyz) are domain-specific; a deployment adds
    // its own rule for them on top of the defaults
    rules.add("instance-id", R"(instance\s+\w+\b)", "instance <ID>");

    std::vector<std::string> raw = {
        "14:00:00 proc01 DEBUG [req-12345] accepted ( IPv4, 12345) server /var/lib/srv",
        "14:00:01 proc02 INFO [req-56789] Get http://ctl01:8774/v2",
        "14:00:02 proc01 DEBUG [req-11111] compute node ready",
        "14:00:03 proc01 DEBUG [req-24680] Failed to fetch instance by id server1 get /v2/srv",
        "14:00:03 proc01 DEBUG [req-13579] Returning 404 to user: Could not find instance abc",
        "14:00:03 proc03 WARNING [req-22222] disk usage high",
        "14:00:03 proc01 DEBUG [req-98765] HTTP exception thrown: Could not find instance abc",
        "14:00:04 proc01 DEBUG [req-43210] Returning 404 to user: Could not find instance xyz",
    };
    TemplateStore store;
    LogSequence seq = encode_log(store, raw, rules);
    CHECK(seq.ids == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 5});
    CHECK(store.size() == 7);
    CHECK(store.text(2) == "<TS> proc02 INFO [req-<ID>] Get <URL>");
    // abc and xyz collapsed into one template
    CHECK(store.text(5) ==
          "<TS> proc01 DEBUG [req-<ID>] Returning <NUM> to user: Could not find instance <ID>");
}
