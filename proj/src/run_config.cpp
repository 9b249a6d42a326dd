#include "sparsek/run_config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sparsek/common.hpp"

namespace sparsek {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw ConfigError("config: " + where + ": " + what);
}

void expect_object(const json& j, const std::string& where) {
    if (!j.is_object()) bad(where, "expected an object");
}

// Strict field access: every present key must be consumed by one of these.
class Section {
  public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        expect_object(j_, name_);
    }

    template <class T>
    void num(const char* key, T& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.push_back(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) bad(name_ + "." + key, "expected a boolean");
            out = it->get<bool>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) bad(name_ + "." + key, "expected a number");
            out = it->get<double>();
        } else {
            if (!it->is_number_unsigned())
                bad(name_ + "." + key, "expected a non-negative integer");
            out = it->get<T>();
        }
    }

    void str(const char* key, std::string& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.push_back(key);
        if (!it->is_string()) bad(name_ + "." + key, "expected a string");
        out = it->get<std::string>();
    }

    // Call last: any key not claimed above is unknown.
    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            (void)value;
            bool ok = false;
            for (const auto& s : seen_) ok = ok || s == key;
            for (const auto& s : subsections_) ok = ok || s == key;
            if (!ok) bad(name_, "unknown key \"" + key + "\"");
        }
    }

    const json* sub(const char* key) {
        auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        subsections_.push_back(key);
        return &*it;
    }

  private:
    const json& j_;
    std::string name_;
    std::vector<std::string> seen_;
    std::vector<std::string> subsections_;
};

template <class E>
E enum_from(const std::string& text, const char* where,
            std::initializer_list<std::pair<const char*, E>> table) {
    for (const auto& [name, value] : table)
        if (text == name) return value;
    std::string allowed;
    for (const auto& [name, value] : table) {
        (void)value;
        if (!allowed.empty()) allowed += ", ";
        allowed += name;
    }
    bad(where, "\"" + text + "\" is not one of: " + allowed);
}

constexpr std::initializer_list<std::pair<const char*, KeyMode>> kKeyModes = {
    {"soft", KeyMode::soft}, {"hard", KeyMode::hard}};
constexpr std::initializer_list<std::pair<const char*, ValueMode>> kValueModes = {
    {"soft", ValueMode::soft}};
constexpr std::initializer_list<std::pair<const char*, MaskApply>> kMaskModes = {
    {"soft", MaskApply::soft}, {"straight_through", MaskApply::straight_through}};
constexpr std::initializer_list<std::pair<const char*, NormMode>> kNormModes = {
    {"none", NormMode::none}, {"timestep_norm", NormMode::timestep_norm}};
constexpr std::initializer_list<std::pair<const char*, SlopeOrder>> kSlopeOrders = {
    {"slope_then_norm", SlopeOrder::slope_then_norm},
    {"norm_then_slope", SlopeOrder::norm_then_slope}};

template <class E>
const char* enum_name(E value, std::initializer_list<std::pair<const char*, E>> table) {
    for (const auto& [name, v] : table)
        if (v == value) return name;
    return "?";
}

void parse_model(const json& j, ToyModelConfig& m) {
    Section s(j, "model");
    s.num("vocab", m.vocab);
    s.num("dim", m.dim);
    s.num("layers", m.layers);
    s.num("heads", m.heads);
    s.num("context", m.context);
    s.num("seed", m.seed);
    std::string kind = to_string(m.kind);
    s.str("kind", kind);
    m.kind = attn_kind_from_string(kind);
    s.finish();
}

void parse_attn(const json& j, AttnConfig& a) {
    Section s(j, "attn");
    s.num("k", a.k);
    s.num("window", a.window);
    s.num("scale", a.scale);
    s.num("group_size", a.group_size);
    std::string key_mode = enum_name(a.key_mode, kKeyModes);
    std::string value_mode = enum_name(a.value_mode, kValueModes);
    std::string mask_mode = enum_name(a.mask_mode, kMaskModes);
    s.str("key_mode", key_mode);
    s.str("value_mode", value_mode);
    s.str("mask_mode", mask_mode);
    a.key_mode = enum_from(key_mode, "attn.key_mode", kKeyModes);
    a.value_mode = enum_from(value_mode, "attn.value_mode", kValueModes);
    a.mask_mode = enum_from(mask_mode, "attn.mask_mode", kMaskModes);
    s.finish();
}

void parse_scoring(const json& j, ScoringParams& sc) {
    Section s(j, "scoring");
    s.num("slope_eps", sc.slope_eps);
    s.num("slope_enabled", sc.slope_enabled);
    std::string norm_mode = enum_name(sc.norm_mode, kNormModes);
    std::string slope_order = enum_name(sc.slope_order, kSlopeOrders);
    s.str("norm_mode", norm_mode);
    s.str("slope_order", slope_order);
    sc.norm_mode = enum_from(norm_mode, "scoring.norm_mode", kNormModes);
    sc.slope_order = enum_from(slope_order, "scoring.slope_order", kSlopeOrders);
    s.finish();
}

void parse_train(const json& j, TrainHparams& t) {
    Section s(j, "train");
    s.num("steps", t.steps);
    s.num("batch", t.batch);
    s.num("lr", t.lr);
    s.num("warmup", t.warmup);
    s.num("final_lr_frac", t.final_lr_frac);
    s.num("weight_decay", t.weight_decay);
    s.num("beta1", t.beta1);
    s.num("beta2", t.beta2);
    s.num("adam_eps", t.adam_eps);
    s.num("clip", t.clip);
    s.num("threads", t.threads);
    s.finish();
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config: not valid JSON");
    RunConfig cfg;
    Section top(j, "config");
    if (const json* m = top.sub("model")) parse_model(*m, cfg.model);
    if (const json* a = top.sub("attn")) parse_attn(*a, cfg.model.attn);
    if (const json* sc = top.sub("scoring")) parse_scoring(*sc, cfg.model.scoring);
    if (const json* t = top.sub("train")) parse_train(*t, cfg.train);
    top.finish();
    cfg.model.attn.heads = cfg.model.heads;
    cfg.model.validate();
    if (cfg.train.batch == 0) throw ConfigError("config: train.batch must be positive");
    if (cfg.train.threads == 0) throw ConfigError("config: train.threads must be positive");
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    const ToyModelConfig& m = cfg.model;
    const AttnConfig& a = m.attn;
    const ScoringParams& sc = m.scoring;
    const TrainHparams& t = cfg.train;
    json j;
    j["model"] = {{"vocab", m.vocab},     {"dim", m.dim},
                  {"layers", m.layers},   {"heads", m.heads},
                  {"context", m.context}, {"kind", to_string(m.kind)},
                  {"seed", m.seed}};
    j["attn"] = {{"k", a.k},
                 {"window", a.window},
                 {"scale", a.scale},
                 {"group_size", a.group_size},
                 {"key_mode", enum_name(a.key_mode, kKeyModes)},
                 {"value_mode", enum_name(a.value_mode, kValueModes)},
                 {"mask_mode", enum_name(a.mask_mode, kMaskModes)}};
    j["scoring"] = {{"slope_eps", sc.slope_eps},
                    {"slope_enabled", sc.slope_enabled},
                    {"norm_mode", enum_name(sc.norm_mode, kNormModes)},
                    {"slope_order", enum_name(sc.slope_order, kSlopeOrders)}};
    j["train"] = {{"steps", t.steps},
                  {"batch", t.batch},
                  {"lr", t.lr},
                  {"warmup", t.warmup},
                  {"final_lr_frac", t.final_lr_frac},
                  {"weight_decay", t.weight_decay},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"adam_eps", t.adam_eps},
                  {"clip", t.clip},
                  {"threads", t.threads}};
    return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config: cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return run_config_from_json(buf.str());
}

}  // namespace sparsek
