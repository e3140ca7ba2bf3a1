#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "log2cmd/rng.hpp"

namespace log2cmd {

// Dense row-major tensor of doubles. Rank 1..3 is all the model needs.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor from(std::vector<int> s, std::vector<double> d);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    // 2-d accessors (rows x cols)
    int rows() const { return shape[0]; }
    int cols() const { return shape[1]; }
    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

// ---------------------------------------------------------------------------
// raw kernels (accumulating); shapes are caller-checked

// C[m,n] += A[m,k] * B[k,n]
void mm_nn_acc(double* c, const double* a, const double* b, int m, int k, int n);
// C[m,n] += A[k,m]^T * B[k,n]
void mm_tn_acc(double* c, const double* a, const double* b, int m, int k, int n);
// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt_acc(double* c, const double* a, const double* b, int m, int k, int n);
void transpose_into(Tensor& dst, const Tensor& src);

// numerically stabilized in-place softmax of a length-n vector
void softmax_inplace(double* v, int n);

// ---------------------------------------------------------------------------

// A learnable tensor with its gradient accumulator and Adam state.
// `version` is bumped by the optimizer so cached transposes can be reused
// across every op of a batch and refreshed only after a step.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m, adam_v;
    std::uint64_t version = 0;

    Parameter() = default;
    Parameter(std::string n, Tensor v);

    void zero_grad();
    const Tensor& transposed() const;  // 2-d values only

  private:
    mutable Tensor tcache_;
    mutable std::uint64_t tversion_ = ~0ull;
};

void init_uniform(Parameter& p, double lo, double hi, Rng& rng);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
};

class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
    // clips, applies the update, bumps versions and zeroes gradients
    void step(std::span<Parameter* const> params);
    std::int64_t steps_taken() const { return t_; }

  private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Reverse-mode tape.
//
// Ops append nodes holding the forward value plus a closure that scatters the
// node's gradient back to its inputs. backward() walks the nodes in exact
// reverse creation order; gradients accumulate additively. Parameter leaves
// flush into Parameter::grad.
class Tape {
  public:
    using Var = int;

    Var leaf(Parameter& p);
    Var constant(Tensor t);

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v)].val; }
    Tensor& grad(Var v);
    double scalar(Var v) const { return value(v).data[0]; }

    // y = x * W (W typically a parameter leaf; its cached transpose speeds
    // up the dx pass)
    Var matmul(Var x, Var w);
    Var add(Var a, Var b);                 // same shape
    Var add_row_bias(Var x, Var b);        // x[m,n] + b[n]
    Var mul(Var a, Var b);                 // elementwise
    Var scale(Var x, double k);
    Var concat_cols(Var a, Var b);
    Var tanh_op(Var x);
    Var sigmoid(Var x);
    Var sum(Var x);                        // -> scalar
    Var add_scalars(const std::vector<Var>& xs);

    // rows of `table` selected by ids; gradient is a scatter-add
    Var rows_lookup(Var table, std::vector<int> ids);

    // inverted-scaling dropout; identity when !training or rate == 0
    Var dropout(Var x, double rate, Rng& rng, bool training);

    // one LSTM cell step over a batch. gates are blocked [i f g o] in the
    // 4H axis. row_mask (optional, length B, 0/1): masked rows copy h/c
    // through unchanged and receive no gradient.
    struct LstmVars {
        Var h, c;
    };
    LstmVars lstm_step(Var x, Var h_prev, Var c_prev, Var wx, Var wh, Var b,
                       const std::vector<double>* row_mask = nullptr);

    // Luong "general" (bilinear) attention over stacked encoder states.
    // enc: [B,S,H]; dec_h: [B,H]; wa: [H,H]; mask[b*S+s] in {0,1}.
    // Returns context [B,H] and weights [B,S].
    struct AttnVars {
        Var context, weights;
    };
    AttnVars attention(Var dec_h, Var enc, Var wa, const std::vector<double>& mask);

    // stack T step tensors [B,H] into [B,T,H]
    Var stack_steps(const std::vector<Var>& steps);

    // mean over unmasked rows of -log softmax(logits)[target]; rows with
    // mask 0 are excluded. n_tokens returns the unmasked row count.
    Var softmax_xent(Var logits, const std::vector<int>& targets,
                     const std::vector<double>& mask, double* sum_out = nullptr,
                     int* n_tokens = nullptr);

    void backward(Var loss);
    std::size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool grad_ready = false;
        std::function<void(Tape&)> back;  // empty for leaves/constants
        Parameter* param = nullptr;
    };

    Var push(Tensor val, std::function<void(Tape&)> back = {}, Parameter* p = nullptr);
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// standalone single-vector primitives (inference path + direct tests)

Tensor embed_lookup(const Tensor& table, int id);
void lstm_cell(const double* x, const double* h_prev, const double* c_prev,
               const Tensor& wx, const Tensor& wh, const Tensor& b, int in_dim,
               int hidden, double* h_out, double* c_out);
Tensor softmax(const Tensor& v);
double cross_entropy(const Tensor& probs, int target);

// context + weights for a single decoder state over S encoder rows [S,H]
void attention_context(const double* dec_h, const Tensor& enc_states, const Tensor& wa,
                       double* ctx_out, double* weights_out);

// Compares reverse-mode gradients of `build` (loss graph over `params`)
// against central differences; returns the max relative error
// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
double grad_check(std::span<Parameter* const> params,
                  const std::function<Tape::Var(Tape&)>& build, double eps = 1e-5);

}  // namespace log2cmd
