#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sparsek/attention.hpp"
#include "sparsek/numerics.hpp"
#include "sparsek/selection.hpp"

namespace sparsek {

// Which attention block the decoder layers use. All kinds share one parameter
// layout except the score vector (selection kinds) and the feature maps
// (linear kind), so loss comparisons across kinds are budget-matched.
enum class AttnKind { full, sw, sparsek_sw, sparsek_linear_sw };

const char* to_string(AttnKind kind);
AttnKind attn_kind_from_string(const std::string& name);

struct ToyModelConfig {
    std::size_t vocab = 256;
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t context = 128;
    AttnKind kind = AttnKind::sparsek_sw;
    AttnConfig attn;        // k/window/modes; heads here is overridden by `heads` above
    ScoringParams scoring;  // slope and normalization settings; w_score lives in the model
    std::uint64_t seed = 1;

    bool uses_selection() const {
        return kind == AttnKind::sparsek_sw || kind == AttnKind::sparsek_linear_sw;
    }
    bool uses_linear_mix() const { return kind == AttnKind::sparsek_linear_sw; }
    // Engine config implied by `kind`: sw zeroes the budget, the linear kind
    // sets the mix flag, heads always mirrors the model's head count.
    AttnConfig effective_attn() const;
    // Upper bound on KV entries one query touches: window + floor(k) for
    // selection kinds, window for sw, the full context for dense.
    std::size_t max_kv_per_query() const;
    void validate() const;
};

struct LayerParams {
    std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;
    AttnParams<double> attn;
    std::vector<double> w_score;       // selection kinds only, else empty
    LinearMixParams<double> feat;      // linear kind only, else empty
    Tensor2 w1, w2;                    // d x 4d and 4d x d
    std::vector<double> b1, b2;
};

// Pre-norm decoder: embeddings, `layers` blocks of attention + GELU MLP with
// residual connections, final norm, untied output head. Doubles throughout;
// the optimizer and checkpoints treat the fields as one flat vector in
// for_each_param order.
struct Model {
    ToyModelConfig cfg;
    Tensor2 tok_emb, pos_emb;          // vocab x d, context x d
    std::vector<LayerParams> layers;
    std::vector<double> lnf_g, lnf_b;
    Tensor2 head;                      // d x vocab
};

// Visits every parameter tensor in a fixed order as (name, ptr, size, decay).
// The order defines the flat layout shared by Adam state and checkpoints.
template <class ModelT, class Fn>
void for_each_param(ModelT& m, Fn&& fn) {
    fn("tok_emb", m.tok_emb.data.data(), m.tok_emb.data.size(), false);
    fn("pos_emb", m.pos_emb.data.data(), m.pos_emb.data.size(), false);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& lp = m.layers[l];
        const std::string tag = "layer" + std::to_string(l) + ".";
        fn(tag + "ln1_g", lp.ln1_g.data(), lp.ln1_g.size(), false);
        fn(tag + "ln1_b", lp.ln1_b.data(), lp.ln1_b.size(), false);
        fn(tag + "wq", lp.attn.wq.data.data(), lp.attn.wq.data.size(), true);
        fn(tag + "wk", lp.attn.wk.data.data(), lp.attn.wk.data.size(), true);
        fn(tag + "wv", lp.attn.wv.data.data(), lp.attn.wv.data.size(), true);
        fn(tag + "wo", lp.attn.wo.data.data(), lp.attn.wo.data.size(), true);
        if (!lp.w_score.empty()) fn(tag + "w_score", lp.w_score.data(), lp.w_score.size(), false);
        for (std::size_t h = 0; h < lp.feat.feat.size(); ++h)
            fn(tag + "feat" + std::to_string(h), lp.feat.feat[h].data.data(),
               lp.feat.feat[h].data.size(), true);
        fn(tag + "ln2_g", lp.ln2_g.data(), lp.ln2_g.size(), false);
        fn(tag + "ln2_b", lp.ln2_b.data(), lp.ln2_b.size(), false);
        fn(tag + "w1", lp.w1.data.data(), lp.w1.data.size(), true);
        fn(tag + "b1", lp.b1.data(), lp.b1.size(), false);
        fn(tag + "w2", lp.w2.data.data(), lp.w2.data.size(), true);
        fn(tag + "b2", lp.b2.data(), lp.b2.size(), false);
    }
    fn("lnf_g", m.lnf_g.data(), m.lnf_g.size(), false);
    fn("lnf_b", m.lnf_b.data(), m.lnf_b.size(), false);
    fn("head", m.head.data.data(), m.head.data.size(), true);
}

Model make_model(const ToyModelConfig& cfg, Rng& rng);
Model zeros_like(const Model& m);  // same shapes, all entries zero (gradient buffer)
std::size_t param_count(const Model& m);

// One training example: context+1 token ids (inputs plus shifted targets) and
// an optional per-prediction weight (empty means uniform). Task generators
// also report where the answer tokens sit.
struct Sample {
    std::vector<std::uint16_t> tokens;
    std::vector<double> loss_weight;
    std::size_t answer_begin = 0;
    std::size_t answer_len = 0;
};

struct LayerTrace {
    Tensor2 ln1_in;
    std::vector<double> ln1_mean, ln1_rstd;
    Tensor2 a;              // post-norm attention input
    AttnTape<double> tape;  // sparse kinds
    Tensor2 head_concat;    // dense kind
    Tensor2 ln2_in;
    std::vector<double> ln2_mean, ln2_rstd;
    Tensor2 b;              // post-norm MLP input
    Tensor2 h1, g1;         // pre/post GELU
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    Tensor2 lnf_in;
    std::vector<double> lnf_mean, lnf_rstd;
    Tensor2 xf;
    Tensor2 logits;
    std::vector<double> nll;  // per prediction position
    double loss = 0.0;        // weighted mean of nll
};

// Weighted mean next-token cross-entropy of one sample; fills `trace` for the
// backward pass when given.
double model_forward(const Model& m, const Sample& sample, ForwardTrace* trace = nullptr);

// Logits for an input prefix (no targets involved); rows = tokens.size().
Tensor2 model_logits(const Model& m, const std::vector<std::uint16_t>& tokens);

// Gradient of model_forward's loss for every parameter, shaped like the model.
Model model_backward(const Model& m, const Sample& sample, const ForwardTrace& trace);

struct TrainHparams {
    std::size_t steps = 200;
    std::size_t batch = 8;
    double lr = 3e-3;
    std::size_t warmup = 100;      // linear ramp, then cosine decay
    double final_lr_frac = 0.1;    // cosine floor as a fraction of lr
    double weight_decay = 0.1;     // decoupled; 2-D weights only, embeddings exempt
    double beta1 = 0.9, beta2 = 0.95;
    double adam_eps = 1e-8;
    double clip = 1.0;             // global gradient norm
    std::size_t threads = 1;       // batch-parallel workers; 1 is bit-reproducible
};

double lr_at(const TrainHparams& hp, std::size_t step);  // step is 1-based

struct StepStats {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct TrainState {
    Model model;
    std::vector<double> adam_m, adam_v;  // flat, for_each_param order
    std::size_t step = 0;
    std::vector<StepStats> history;
    Rng rng{1};
};

using SampleFn = std::function<Sample(Rng&)>;

TrainState init_train_state(const ToyModelConfig& cfg);

// One optimizer step on a batch: mean loss/grads, global clip, AdamW with
// cosine schedule. Throws NumericError with per-tensor gradient norms if the
// loss goes non-finite.
StepStats train_step(TrainState& state, const std::vector<Sample>& batch,
                     const TrainHparams& hp);

// Runs steps state.step+1 .. hp.steps, drawing hp.batch samples per step from
// `draw`. Appends one CSV row per step to metrics_csv when non-empty.
void train_loop(TrainState& state, const SampleFn& draw, const TrainHparams& hp,
                const std::string& metrics_csv = "");

TrainState train(const ToyModelConfig& cfg, const SampleFn& draw, const TrainHparams& hp,
                 const std::string& metrics_csv = "");

void write_metrics_csv(const std::string& path, const std::vector<StepStats>& history);

// Versioned binary checkpoint (magic "SPKT"): config echo, step, parameters,
// Adam moments, RNG state, loss history. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

// Byte-level corpus: each document is one token stream, ids < 256 for text.
struct Corpus {
    std::vector<std::vector<std::uint16_t>> documents;
};

std::vector<std::uint16_t> bytes_to_tokens(const std::string& text);
// Reads one UTF-8 file, or every regular file in a directory (one document
// each, sorted by name).
Corpus load_corpus(const std::string& path);

// Uniform sampler over (document, window) pairs. Documents shorter than
// context+1 tokens are skipped rather than packed: a selection state carried
// across unrelated texts is meaningless.
class CorpusSampler {
  public:
    CorpusSampler(Corpus corpus, std::size_t context);
    Sample operator()(Rng& rng) const;

  private:
    Corpus corpus_;
    std::vector<std::size_t> usable_;  // indices of long-enough documents
    std::size_t context_;
};

// exp of mean next-token NLL over non-overlapping context windows; every
// token except each document's first is predicted exactly once.
double eval_ppl(const TrainState& state, const Corpus& corpus);

// Mean sample loss over `samples` fresh draws (held-out evaluation).
double eval_loss(const TrainState& state, const SampleFn& draw, std::size_t samples, Rng& rng);

// Greedy (temperature 0) or sampled continuation; returns prompt + new tokens.
// The model sees at most `context` trailing tokens per step.
std::vector<std::uint16_t> generate(const TrainState& state,
                                    const std::vector<std::uint16_t>& prompt,
                                    std::size_t n_tokens, double temperature, Rng& rng);

// Synthetic-task alphabet: digits 0..9 and control tokens below 16, a
// 10-letter filler alphabet from 16. Payload and filler never share symbols,
// so retention can key on content.
inline constexpr std::size_t kTaskVocab = 32;
inline constexpr std::uint16_t kTaskFiller = 10;
inline constexpr std::uint16_t kTaskKey = 11;
inline constexpr std::uint16_t kTaskQuery = 12;
inline constexpr std::uint16_t kTaskSep = 13;
inline constexpr std::uint16_t kTaskLetterBase = 16;
inline constexpr std::size_t kRecallPeriod = 24;

// Filler stream hiding `passkey_len` random digits after a key marker; a query
// marker at the end asks for them back. `distance` is query-to-key in tokens
// (0 draws one beyond `window` at random). Loss weight sits on the answer
// predictions only.
Sample make_passkey_task(Rng& rng, std::size_t context_len, std::size_t window,
                         std::size_t distance = 0, std::size_t passkey_len = 4);

// Digit payload at the start, letter filler copying the token kRecallPeriod
// back (with 1-in-10 fresh draws), then a cue asking the payload back. The
// answer sits a full context away from the payload, so answering needs
// retained out-of-window state; the innovating filler rewards keeping the
// recent period in reach. Answer predictions carry 4x loss weight.
Sample make_recall_task(Rng& rng, std::size_t context_len, std::size_t payload_len);

// Teacher-forced per-digit retrieval accuracy over fresh passkey tasks.
double passkey_accuracy(const TrainState& state, std::size_t window, std::size_t distance,
                        std::size_t passkey_len, std::size_t trials, Rng& rng);

struct ModelGradCheck {
    double max_rel_err = 0.0;
    std::size_t coords = 0;
    std::uint64_t seed_used = 0;
    std::size_t seeds_tried = 0;
    bool pass = false;
};

// Central-difference check of model_backward on one random sample, a strided
// subset of every parameter tensor. Seeds are advanced until the selection
// tapes keep all scores clear of clamp boundaries, so the differences stay on
// the analytic branch.
ModelGradCheck model_gradcheck(const ToyModelConfig& cfg, std::uint64_t seed, double tol = 1e-3,
                               std::size_t coords_per_tensor = 6, double h = 1e-5);

}  // namespace sparsek
