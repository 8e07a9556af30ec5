#include "negmine/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace negmine {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    long long x = std::strtoll(v.c_str(), &end, 10);
    if (errno != 0 || end == v.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    return static_cast<int64_t>(x);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end == v.c_str() || *end != '\0' || v.find('-') != std::string::npos)
        throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    return static_cast<uint64_t>(x);
}

double parse_f64(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (errno != 0 || end == v.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': expected real number, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt_f64(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

struct Entry {
    std::string name;
    std::string description;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::vector<Entry> build_registry() {
    std::vector<Entry> r;
    auto I = [&r](const std::string& n, const std::string& d, auto ref) {
        r.push_back({n, d,
                     [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
                     [n, ref](RunConfig& c, const std::string& v) { ref(c) = parse_i64(n, v); }});
    };
    auto U = [&r](const std::string& n, const std::string& d, auto ref) {
        r.push_back({n, d,
                     [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
                     [n, ref](RunConfig& c, const std::string& v) { ref(c) = parse_u64(n, v); }});
    };
    auto F = [&r](const std::string& n, const std::string& d, auto ref) {
        r.push_back({n, d,
                     [ref](const RunConfig& c) { return fmt_f64(ref(const_cast<RunConfig&>(c))); },
                     [n, ref](RunConfig& c, const std::string& v) { ref(c) = parse_f64(n, v); }});
    };
    auto B = [&r](const std::string& n, const std::string& d, auto ref) {
        r.push_back({n, d,
                     [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)) ? std::string("true") : std::string("false"); },
                     [n, ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(n, v); }});
    };
    auto S = [&r](const std::string& n, const std::string& d, auto ref) {
        r.push_back({n, d,
                     [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
                     [ref](RunConfig& c, const std::string& v) { ref(c) = v; }});
    };

    I("world.n_concepts", "number of latent concepts", [](RunConfig& c) -> int64_t& { return c.world.n_concepts; });
    I("world.n_images", "image count", [](RunConfig& c) -> int64_t& { return c.world.n_images; });
    I("world.n_texts", "text count (one labeled positive image each)", [](RunConfig& c) -> int64_t& { return c.world.n_texts; });
    I("world.d_latent", "concept prototype dimension", [](RunConfig& c) -> int64_t& { return c.world.d_latent; });
    I("world.d_img", "image feature dimension (must equal world.d_latent)", [](RunConfig& c) -> int64_t& { return c.world.d_img; });
    I("world.k_text", "tokens per text", [](RunConfig& c) -> int64_t& { return c.world.k_text; });
    I("world.vocab", "token vocabulary size", [](RunConfig& c) -> int64_t& { return c.world.vocab; });
    F("world.noise_sigma", "gaussian noise scale on image features", [](RunConfig& c) -> double& { return c.world.noise_sigma; });
    I("world.max_concepts", "max concepts per image", [](RunConfig& c) -> int64_t& { return c.world.max_concepts; });

    I("model.d_emb", "embedding dimension of both towers", [](RunConfig& c) -> int64_t& { return c.model.d_emb; });
    I("model.hidden", "tower hidden width", [](RunConfig& c) -> int64_t& { return c.model.hidden; });
    F("model.temperature", "ITC softmax temperature (fixed)", [](RunConfig& c) -> double& { return c.model.temperature; });
    F("model.label_smoothing", "ITC label smoothing", [](RunConfig& c) -> double& { return c.model.label_smoothing; });

    I("scheduler.m", "quantile count per similarity row", [](RunConfig& c) -> int64_t& { return c.scheduler.m; });
    I("scheduler.hidden", "scheduler MLP hidden width", [](RunConfig& c) -> int64_t& { return c.scheduler.hidden; });
    I("scheduler.blocks", "residual block count", [](RunConfig& c) -> int64_t& { return c.scheduler.blocks; });
    F("scheduler.lr", "scheduler AdamW learning rate (ascent step)", [](RunConfig& c) -> double& { return c.scheduler.lr; });
    F("scheduler.weight_decay", "scheduler AdamW weight decay", [](RunConfig& c) -> double& { return c.scheduler.weight_decay; });
    F("scheduler.eps_floor", "additive floor on Beta alpha/beta", [](RunConfig& c) -> double& { return c.scheduler.eps_floor; });
    F("scheduler.baseline_ema", "EMA reward baseline decay, 0 = off", [](RunConfig& c) -> double& { return c.scheduler.baseline_ema; });
    B("scheduler.global_context", "append a pooled context vector to each row input", [](RunConfig& c) -> bool& { return c.scheduler.global_context; });

    I("train.epochs", "training epochs", [](RunConfig& c) -> int64_t& { return c.train.epochs; });
    I("train.batch", "mini-batch size B", [](RunConfig& c) -> int64_t& { return c.train.batch; });
    I("train.space", "search space size |M|", [](RunConfig& c) -> int64_t& { return c.train.space; });
    F("train.lr", "VLP learning rate eta (constant after warmup)", [](RunConfig& c) -> double& { return c.train.lr; });
    I("train.warmup_epochs", "linear warmup epochs for the VLP learning rate", [](RunConfig& c) -> int64_t& { return c.train.warmup_epochs; });
    F("train.weight_decay", "VLP AdamW weight decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    F("train.adam_beta1", "AdamW beta1 (both optimizers)", [](RunConfig& c) -> double& { return c.train.adam_beta1; });
    F("train.adam_beta2", "AdamW beta2 (both optimizers)", [](RunConfig& c) -> double& { return c.train.adam_beta2; });
    F("train.mask_prob", "MLM masking probability", [](RunConfig& c) -> double& { return c.train.mask_prob; });
    B("train.drop_tail", "drop short final batch of each search space", [](RunConfig& c) -> bool& { return c.train.drop_tail; });
    U("train.seed", "master seed (expanded into named substreams)", [](RunConfig& c) -> uint64_t& { return c.train.seed; });
    S("train.policy", "batch policy: falcon | fixed:<q> | hardening | softening | uniform", [](RunConfig& c) -> std::string& { return c.train.policy; });
    I("train.audit_every", "dump a reward audit record every N steps (0 = off)", [](RunConfig& c) -> int64_t& { return c.train.audit_every; });
    B("train.log_batches", "write per-batch index traces to batches.jsonl", [](RunConfig& c) -> bool& { return c.train.log_batches; });
    B("train.dump_sim", "dump S and the quantile summary per search space", [](RunConfig& c) -> bool& { return c.train.dump_sim; });

    I("eval.count", "held-out pair count (tail of the world, never trained on)", [](RunConfig& c) -> int64_t& { return c.eval.count; });
    S("eval.ks", "recall@K cutoffs, comma separated", [](RunConfig& c) -> std::string& { return c.eval.ks; });
    I("eval.bucket", "step bucket width for the false-negative curve", [](RunConfig& c) -> int64_t& { return c.eval.bucket; });

    return r;
}

const std::vector<Entry>& registry() {
    static const std::vector<Entry> r = build_registry();
    return r;
}

const Entry* find_entry(const std::string& key) {
    for (const auto& e : registry())
        if (e.name == key) return &e;
    return nullptr;
}

std::string valid_keys_text() {
    std::string s;
    for (const auto& e : registry()) {
        if (!s.empty()) s += ", ";
        s += e.name;
    }
    return s;
}

}  // namespace

void RunConfig::validate() const {
    auto req = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    req(world.n_concepts >= 1, "world.n_concepts must be >= 1");
    req(world.n_images >= 1 && world.n_texts >= 1, "world sizes must be >= 1");
    req(world.d_latent >= 1, "world.d_latent must be >= 1");
    req(world.d_img == world.d_latent,
        "world.d_img must equal world.d_latent (image features are prototype sums)");
    req(world.k_text >= 1, "world.k_text must be >= 1");
    req(world.vocab >= world.n_concepts + 2,
        "world.vocab must be >= world.n_concepts + 2 (mask token + concept tokens + filler)");
    req(world.noise_sigma >= 0.0, "world.noise_sigma must be >= 0");
    req(world.max_concepts >= 1 && world.max_concepts <= world.n_concepts,
        "world.max_concepts must be in [1, world.n_concepts]");

    req(model.d_emb >= 1 && model.hidden >= 1, "model dims must be >= 1");
    req(model.temperature > 0.0, "model.temperature must be > 0");
    req(model.label_smoothing >= 0.0 && model.label_smoothing < 1.0,
        "model.label_smoothing must be in [0, 1)");

    req(scheduler.m >= 2, "scheduler.m must be >= 2");
    req(scheduler.hidden >= 1 && scheduler.blocks >= 0, "scheduler sizes invalid");
    req(scheduler.eps_floor > 0.0, "scheduler.eps_floor must be > 0");
    req(scheduler.baseline_ema >= 0.0 && scheduler.baseline_ema < 1.0,
        "scheduler.baseline_ema must be in [0, 1)");

    req(train.epochs >= 1, "train.epochs must be >= 1");
    req(train.batch >= 2, "train.batch must be >= 2");
    req(train.space >= train.batch, "train.space must be >= train.batch");
    req(scheduler.m <= train.space, "scheduler.m must be <= train.space");
    req(train.lr >= 0.0, "train.lr must be >= 0");
    req(train.warmup_epochs >= 0, "train.warmup_epochs must be >= 0");
    req(train.mask_prob >= 0.0 && train.mask_prob <= 1.0, "train.mask_prob must be in [0, 1]");
    req(train.audit_every >= 0, "train.audit_every must be >= 0");

    req(eval.count >= 0, "eval.count must be >= 0");
    req(eval.bucket >= 1, "eval.bucket must be >= 1");
    parse_ks(eval.ks);

    req(world.n_images == world.n_texts,
        "training requires world.n_images == world.n_texts (pair-level batching)");
    req(world.n_images - eval.count >= train.batch,
        "world too small: need at least train.batch training pairs after the eval split");
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& e : registry()) k.push_back({e.name, e.description});
        return k;
    }();
    return keys;
}

std::string config_get(const RunConfig& cfg, const std::string& key) {
    const Entry* e = find_entry(key);
    if (!e) throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid_keys_text());
    return e->get(cfg);
}

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
    const Entry* e = find_entry(key);
    if (!e) throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid_keys_text());
    e->set(cfg, value);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::set<std::string> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (!seen.insert(key).second)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate config key '" + key + "'");
        config_set(cfg, key, value);
    }
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const auto& ov : overrides) {
        size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + ov + "'");
        config_set(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    }
}

std::string dump_config(const RunConfig& cfg, bool with_descriptions) {
    std::ostringstream os;
    std::string group;
    for (const auto& e : registry()) {
        std::string g = e.name.substr(0, e.name.find('.'));
        if (g != group) {
            if (!group.empty()) os << "\n";
            group = g;
        }
        if (with_descriptions) os << "# " << e.description << "\n";
        os << e.name << " = " << e.get(cfg) << "\n";
    }
    return os.str();
}

std::map<std::string, std::string> config_snapshot(const RunConfig& cfg) {
    std::map<std::string, std::string> m;
    for (const auto& e : registry()) m[e.name] = e.get(cfg);
    return m;
}

uint64_t config_hash(const RunConfig& cfg) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [k, v] : config_snapshot(cfg)) {
        h = fnv1a(k.data(), k.size(), h);
        h = fnv1a("=", 1, h);
        h = fnv1a(v.data(), v.size(), h);
        h = fnv1a("\n", 1, h);
    }
    return h;
}

std::vector<int64_t> parse_ks(const std::string& ks) {
    std::vector<int64_t> out;
    std::stringstream ss(ks);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        int64_t k = parse_i64("eval.ks", tok);
        if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
        out.push_back(k);
    }
    if (out.empty()) throw ConfigError("eval.ks must list at least one cutoff");
    for (size_t i = 1; i < out.size(); ++i)
        if (out[i] <= out[i - 1]) throw ConfigError("eval.ks must be strictly increasing");
    return out;
}

}  // namespace negmine
