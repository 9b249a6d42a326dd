#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sparsek/run_config.hpp"
#include "sparsek/trainer.hpp"
#include "test_util.hpp"

using namespace sparsek;
namespace fs = std::filesystem;

namespace {

ToyModelConfig tiny_cfg(AttnKind kind) {
    ToyModelConfig cfg;
    cfg.vocab = 16;
    cfg.dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.context = 16;
    cfg.kind = kind;
    cfg.attn.k = 4.0;
    cfg.attn.window = 4;
    if (kind == AttnKind::sw) {
        cfg.attn.k = 0.0;
        cfg.attn.window = 8;
    }
    return cfg;
}

Corpus cycle_corpus(std::size_t len) {
    Corpus c;
    c.documents.emplace_back();
    for (std::size_t i = 0; i < len; ++i)
        c.documents[0].push_back(static_cast<std::uint16_t>(i % 10));
    return c;
}

fs::path fresh_dir(const char* leaf) {
    const fs::path dir = fs::temp_directory_path() / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<double> flat_params(const Model& m) {
    std::vector<double> out;
    for_each_param(m, [&](const std::string&, const double* ptr, std::size_t n, bool) {
        out.insert(out.end(), ptr, ptr + n);
    });
    return out;
}

}  // namespace

TEST_CASE("trainer: every attention kind memorizes a short cycle") {
    const Corpus corpus = cycle_corpus(4000);
    for (const AttnKind kind : {AttnKind::full, AttnKind::sw, AttnKind::sparsek_sw,
                                AttnKind::sparsek_linear_sw}) {
        ToyModelConfig cfg = tiny_cfg(kind);
        const CorpusSampler sampler(corpus, cfg.context);
        TrainHparams hp;
        hp.steps = 200;
        const TrainState st = train(cfg, [&](Rng& r) { return sampler(r); }, hp);
        CAPTURE(to_string(kind));
        CHECK(st.history.size() == 200);
        CHECK(st.history.back().loss < 0.1);
    }
}

TEST_CASE("trainer: fixed seed gives identical loss curves") {
    const Corpus corpus = cycle_corpus(600);
    const ToyModelConfig cfg = tiny_cfg(AttnKind::sparsek_sw);
    const CorpusSampler sampler(corpus, cfg.context);
    TrainHparams hp;
    hp.steps = 30;
    const TrainState a = train(cfg, [&](Rng& r) { return sampler(r); }, hp);
    const TrainState b = train(cfg, [&](Rng& r) { return sampler(r); }, hp);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].loss == b.history[i].loss);
        CHECK(a.history[i].lr == b.history[i].lr);
    }
}

TEST_CASE("trainer: checkpoint round-trips byte-identically and resumes bit-exactly") {
    const fs::path dir = fresh_dir("sparsek_trainer_ckpt");
    const Corpus corpus = cycle_corpus(600);
    const ToyModelConfig cfg = tiny_cfg(AttnKind::sparsek_sw);
    const CorpusSampler sampler(corpus, cfg.context);
    const SampleFn draw = [&](Rng& r) { return sampler(r); };

    // Keep both runs inside warmup: there lr_at depends only on the step
    // index, so the 20- and 30-step schedules agree where they overlap.
    TrainHparams hp20;
    hp20.steps = 20;
    hp20.warmup = 50;
    TrainState halted = train(cfg, draw, hp20);
    const fs::path ckpt = dir / "model.ckpt";
    save_checkpoint(ckpt.string(), halted);

    TrainState loaded = load_checkpoint(ckpt.string());
    const fs::path again = dir / "again.ckpt";
    save_checkpoint(again.string(), loaded);
    CHECK(slurp(ckpt) == slurp(again));

    TrainHparams hp30 = hp20;
    hp30.steps = 30;
    TrainState straight = train(cfg, draw, hp30);
    train_loop(loaded, draw, hp30);
    REQUIRE(loaded.step == straight.step);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(loaded.history[i].loss == straight.history[i].loss);
        CHECK(loaded.history[i].lr == straight.history[i].lr);
    }
    const std::vector<double> pa = flat_params(loaded.model);
    const std::vector<double> pb = flat_params(straight.model);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("trainer: corrupt checkpoints are refused") {
    const fs::path dir = fresh_dir("sparsek_trainer_badckpt");
    const fs::path bad = dir / "bad.ckpt";
    std::ofstream(bad, std::ios::binary) << "XXXXnot a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(bad.string()), IoError);

    TrainState st = init_train_state(tiny_cfg(AttnKind::full));
    const fs::path good = dir / "good.ckpt";
    save_checkpoint(good.string(), st);
    const std::string bytes = slurp(good);
    const fs::path cut = dir / "cut.ckpt";
    std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(cut.string()), IoError);
}

TEST_CASE("trainer: eval_ppl matches a direct oracle and a zeroed head is uniform") {
    ToyModelConfig cfg = tiny_cfg(AttnKind::sparsek_sw);
    Rng rng(7);
    TrainState st;
    st.model = make_model(cfg, rng);

    Corpus doc;
    doc.documents.emplace_back();
    for (std::size_t i = 0; i < 12; ++i)
        doc.documents[0].push_back(static_cast<std::uint16_t>((i * 5 + 3) % cfg.vocab));

    const auto& toks = doc.documents[0];
    const Tensor2 logits = model_logits(st.model, toks);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
        std::vector<double> row(logits.row(i), logits.row(i) + logits.cols);
        // Row i scores the i+1'th token; compare against its softmax NLL.
        const std::vector<double> p = softmax_row(row);
        total += -std::log(p[toks[i + 1]]);
    }
    const double oracle = std::exp(total / static_cast<double>(toks.size() - 1));
    CHECK(eval_ppl(st, doc) == doctest::Approx(oracle).epsilon(1e-9));

    for (double& v : st.model.head.data) v = 0.0;
    CHECK(eval_ppl(st, doc) ==
          doctest::Approx(static_cast<double>(cfg.vocab)).epsilon(0.05));

    const Corpus memorize = cycle_corpus(2000);
    const CorpusSampler sampler(memorize, cfg.context);
    TrainHparams hp;
    hp.steps = 200;
    const TrainState trained = train(cfg, [&](Rng& r) { return sampler(r); }, hp);
    CHECK(eval_ppl(trained, memorize) < 1.2);
}

TEST_CASE("trainer: model gradients match finite differences") {
    ToyModelConfig cfg;
    cfg.vocab = 50;
    cfg.dim = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.context = 32;
    cfg.attn.k = 4.5;
    cfg.attn.window = 4;

    cfg.kind = AttnKind::sparsek_sw;
    ModelGradCheck r = model_gradcheck(cfg, 100, 1e-3);
    CAPTURE(r.max_rel_err);
    CAPTURE(r.seeds_tried);
    CHECK(r.pass);

    cfg.kind = AttnKind::sparsek_linear_sw;
    r = model_gradcheck(cfg, 100, 1e-3);
    CAPTURE(r.max_rel_err);
    CHECK(r.pass);
}

TEST_CASE("trainer: kv budgets and parameter counts line up across kinds") {
    ToyModelConfig sel = tiny_cfg(AttnKind::sparsek_sw);
    sel.attn.k = 6.0;
    sel.attn.window = 6;
    ToyModelConfig sw = sel;
    sw.kind = AttnKind::sw;
    sw.attn.k = 0.0;
    sw.attn.window = 12;
    CHECK(sel.max_kv_per_query() == sw.max_kv_per_query());

    Rng rng(3);
    const std::size_t d = sel.dim, p = d / sel.heads, layers = sel.layers;
    const std::size_t base = param_count(make_model(sw, rng));
    ToyModelConfig full = sw;
    full.kind = AttnKind::full;
    CHECK(param_count(make_model(full, rng)) == base);
    CHECK(param_count(make_model(sel, rng)) == base + layers * d);
    ToyModelConfig lin = sel;
    lin.kind = AttnKind::sparsek_linear_sw;
    CHECK(param_count(make_model(lin, rng)) == base + layers * d + layers * sel.heads * p * p);
}

TEST_CASE("trainer: passkey task layout") {
    Rng rng(11);
    const std::size_t n = 96, w = 24, P = 4;
    const Sample s = make_passkey_task(rng, n, w);
    REQUIRE(s.tokens.size() == n + 1);
    REQUIRE(s.loss_weight.size() == n);
    const std::size_t q_pos = n - P;
    CHECK(s.tokens[q_pos] == kTaskQuery);
    CHECK(s.answer_begin == q_pos + 1);
    CHECK(s.answer_len == P);

    std::size_t key_at = n;
    for (std::size_t i = 0; i < q_pos; ++i)
        if (s.tokens[i] == kTaskKey) key_at = i;
    REQUIRE(key_at < q_pos);
    CHECK(q_pos - key_at > w);  // the key always sits beyond the window
    for (std::size_t j = 0; j < P; ++j) {
        CHECK(s.tokens[key_at + 1 + j] == s.tokens[q_pos + 1 + j]);
        CHECK(s.tokens[q_pos + 1 + j] < 10);
    }
    for (std::size_t i = 0; i < n; ++i)
        CHECK(s.loss_weight[i] == (i >= q_pos ? 1.0 : 0.0));

    Rng r1(5), r2(5);
    const Sample a = make_passkey_task(r1, n, w, 40);
    const Sample b = make_passkey_task(r2, n, w, 40);
    CHECK(a.tokens == b.tokens);
    CHECK_THROWS_AS(make_passkey_task(rng, n, n), ArgumentError);
}

TEST_CASE("trainer: recall task layout") {
    Rng rng(13);
    const std::size_t n = 192, L = 16;
    const Sample s = make_recall_task(rng, n, L);
    REQUIRE(s.tokens.size() == n + 1);
    const std::size_t q_pos = n - L;
    CHECK(s.tokens[0] == kTaskKey);
    CHECK(s.tokens[L + 1] == kTaskSep);
    CHECK(s.tokens[q_pos] == kTaskQuery);
    for (std::size_t j = 0; j < L; ++j) {
        CHECK(s.tokens[1 + j] < 10);
        CHECK(s.tokens[1 + j] == s.tokens[q_pos + 1 + j]);
    }
    // Disjoint alphabets: filler only letters, payload only digits.
    std::size_t copies = 0, fresh = 0;
    for (std::size_t i = L + 2; i < q_pos; ++i) {
        CHECK(s.tokens[i] >= kTaskLetterBase);
        CHECK(s.tokens[i] < kTaskLetterBase + 10);
        if (i >= L + 2 + kRecallPeriod) {
            if (s.tokens[i] == s.tokens[i - kRecallPeriod]) ++copies;
            else ++fresh;
        }
    }
    CHECK(copies > 3 * fresh);  // copy chain with occasional innovations
    REQUIRE(s.loss_weight.size() == n);
    for (std::size_t i = 0; i < n; ++i)
        CHECK(s.loss_weight[i] == (i >= q_pos ? 4.0 : 1.0));
    CHECK_THROWS_AS(make_recall_task(rng, 2 * L + 4, L), ArgumentError);
}

TEST_CASE("trainer: divergence aborts with gradient norms in the message") {
    TrainState st = init_train_state(tiny_cfg(AttnKind::full));
    st.model.head.data[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<Sample> batch(1);
    batch[0].tokens = {1, 2, 3, 4, 5};
    TrainHparams hp;
    try {
        train_step(st, batch, hp);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("gradient norms") != std::string::npos);
    }
}

TEST_CASE("trainer: corpus loading and short-document handling") {
    const fs::path dir = fresh_dir("sparsek_trainer_corpus");
    std::ofstream(dir / "b.txt", std::ios::binary) << "world";
    std::ofstream(dir / "a.txt", std::ios::binary) << "hello";

    const Corpus one = load_corpus((dir / "a.txt").string());
    REQUIRE(one.documents.size() == 1);
    CHECK(one.documents[0] == bytes_to_tokens("hello"));

    const Corpus both = load_corpus(dir.string());
    REQUIRE(both.documents.size() == 2);  // sorted by filename
    CHECK(both.documents[0] == bytes_to_tokens("hello"));
    CHECK(both.documents[1] == bytes_to_tokens("world"));

    CHECK_THROWS_AS(load_corpus((dir / "missing.txt").string()), IoError);

    // Documents shorter than context+1 never appear in samples.
    Corpus mixed;
    mixed.documents.push_back(std::vector<std::uint16_t>(5, 3));
    mixed.documents.push_back(std::vector<std::uint16_t>(40, 7));
    const CorpusSampler sampler(mixed, 16);
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        const Sample s = sampler(rng);
        REQUIRE(s.tokens.size() == 17);
        for (const std::uint16_t t : s.tokens) CHECK(t == 7);
    }
    Corpus all_short;
    all_short.documents.push_back(std::vector<std::uint16_t>(5, 3));
    CHECK_THROWS_AS(CorpusSampler(all_short, 16), ConfigError);
}

TEST_CASE("trainer: generation is deterministic and greedy continues the cycle") {
    const Corpus corpus = cycle_corpus(2000);
    ToyModelConfig cfg = tiny_cfg(AttnKind::sparsek_sw);
    const CorpusSampler sampler(corpus, cfg.context);
    TrainHparams hp;
    hp.steps = 200;
    const TrainState st = train(cfg, [&](Rng& r) { return sampler(r); }, hp);

    const std::vector<std::uint16_t> prompt{0, 1, 2, 3};
    Rng g1(9);
    const auto out = generate(st, prompt, 12, 0.0, g1);
    REQUIRE(out.size() == prompt.size() + 12);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out[i] == static_cast<std::uint16_t>(i % 10));

    Rng g2(9), g3(9);
    CHECK(generate(st, prompt, 12, 0.8, g2) == generate(st, prompt, 12, 0.8, g3));
}

TEST_CASE("trainer: learning-rate schedule ramps, decays, and floors") {
    TrainHparams hp;
    hp.steps = 200;
    hp.warmup = 100;
    hp.lr = 3e-3;
    hp.final_lr_frac = 0.1;
    CHECK(lr_at(hp, 1) == doctest::Approx(hp.lr / 100.0));
    for (std::size_t s = 2; s <= 100; ++s) CHECK(lr_at(hp, s) > lr_at(hp, s - 1));
    CHECK(lr_at(hp, 100) == doctest::Approx(hp.lr));
    for (std::size_t s = 101; s <= 200; ++s) CHECK(lr_at(hp, s) < lr_at(hp, s - 1));
    CHECK(lr_at(hp, 200) == doctest::Approx(hp.lr * hp.final_lr_frac));
    CHECK(lr_at(hp, 250) == doctest::Approx(hp.lr * hp.final_lr_frac));
}

TEST_CASE("trainer: attention kind names round-trip") {
    for (const AttnKind kind : {AttnKind::full, AttnKind::sw, AttnKind::sparsek_sw,
                                AttnKind::sparsek_linear_sw})
        CHECK(attn_kind_from_string(to_string(kind)) == kind);
    CHECK_THROWS_AS(attn_kind_from_string("dense"), ConfigError);
}

TEST_CASE("config: round-trip identity, defaults, and strictness") {
    RunConfig def;
    const std::string text = run_config_to_json(def);
    const RunConfig back = run_config_from_json(text);
    CHECK(run_config_to_json(back) == text);

    const RunConfig part = run_config_from_json(
        R"({"model":{"dim":32,"heads":4,"kind":"sw"},"attn":{"window":16},"train":{"lr":0.001}})");
    CHECK(part.model.dim == 32);
    CHECK(part.model.kind == AttnKind::sw);
    CHECK(part.model.attn.window == 16);
    CHECK(part.model.attn.heads == 4);  // attn mirrors the model head count
    CHECK(part.train.lr == 0.001);
    CHECK(part.train.steps == TrainHparams{}.steps);

    CHECK_THROWS_AS(run_config_from_json("{"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"model":{"dims":32}})"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"models":{}})"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"train":{"steps":1.5}})"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"model":{"kind":"dense"}})"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"attn":{"k":-2}})"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), IoError);
}
