#include "negmine/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "negmine/linalg.hpp"

namespace negmine::world {

using nlohmann::json;

namespace {

// Concept prototypes: unit-norm random Gaussian directions, re-drawn while any
// pair is too aligned. In d=32 random pairs are near-orthogonal, so retries
// are rare; the loop exists for tiny d_latent configs.
std::vector<Concept> make_concepts(const WorldConfig& cfg, RngStream& rng) {
    const double kMaxCos = 0.95;
    std::vector<Concept> cs;
    cs.reserve(cfg.n_concepts);
    for (int64_t i = 0; i < cfg.n_concepts; ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 1000)
                throw ConfigError("cannot place distinct concept prototypes; raise world.d_latent");
            std::vector<double> p(cfg.d_latent);
            for (double& x : p) x = rng.normal();
            double n = norm2(p.data(), p.size());
            if (n < 1e-9) continue;
            for (double& x : p) x /= n;
            bool ok = true;
            for (const auto& prev : cs)
                if (cosine(p.data(), prev.prototype.data(), p.size()) >= kMaxCos) {
                    ok = false;
                    break;
                }
            if (ok) {
                cs.push_back({i, std::move(p)});
                break;
            }
        }
    }
    return cs;
}

std::vector<int64_t> draw_concept_set(int64_t n_concepts, int64_t max_k, RngStream& rng) {
    int64_t k = 1 + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(max_k)));
    std::set<int64_t> chosen;
    while (static_cast<int64_t>(chosen.size()) < k)
        chosen.insert(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n_concepts))));
    return {chosen.begin(), chosen.end()};
}

// Uniform nonempty subset: reject the empty mask. Set sizes are <= 3 by
// default so rejection is cheap.
std::vector<int64_t> draw_subset(const std::vector<int64_t>& base, RngStream& rng) {
    const size_t n = base.size();
    for (;;) {
        std::vector<int64_t> sub;
        for (size_t i = 0; i < n; ++i)
            if (rng.uniform() < 0.5) sub.push_back(base[i]);
        if (!sub.empty()) return sub;
    }
}

}  // namespace

SemanticUniverse generate_universe(const WorldConfig& cfg, uint64_t seed) {
    if (cfg.n_concepts < 1 || cfg.n_images < 1 || cfg.n_texts < 1)
        throw ConfigError("world sizes must be positive");
    if (cfg.d_img != cfg.d_latent)
        throw ConfigError("world.d_img must equal world.d_latent");
    if (cfg.vocab < cfg.n_concepts + 2)
        throw ConfigError("world.vocab must be >= n_concepts + 2 (mask + concepts + filler)");
    if (cfg.max_concepts < 1 || cfg.max_concepts > cfg.n_concepts)
        throw ConfigError("world.max_concepts must be in [1, n_concepts]");
    if (cfg.k_text < 1) throw ConfigError("world.k_text must be >= 1");

    SemanticUniverse u;
    u.config = cfg;
    u.seed = seed;
    RngStream rng(seed, "world");

    u.concepts = make_concepts(cfg, rng);

    u.images.reserve(cfg.n_images);
    for (int64_t i = 0; i < cfg.n_images; ++i) {
        ImageItem img;
        img.id = i;
        img.concept_set = draw_concept_set(cfg.n_concepts, cfg.max_concepts, rng);
        img.feature.assign(cfg.d_img, 0.0);
        for (int64_t c : img.concept_set)
            for (int64_t d = 0; d < cfg.d_img; ++d)
                img.feature[d] += u.concepts[c].prototype[d];
        for (int64_t d = 0; d < cfg.d_img; ++d) img.feature[d] += cfg.noise_sigma * rng.normal();
        u.images.push_back(std::move(img));
    }

    const int64_t n_filler = cfg.vocab - filler_base(cfg.n_concepts);
    u.texts.reserve(cfg.n_texts);
    for (int64_t t = 0; t < cfg.n_texts; ++t) {
        TextItem txt;
        txt.id = t;
        txt.positive_image = t % cfg.n_images;
        txt.concept_subset = draw_subset(u.images[txt.positive_image].concept_set, rng);
        // Concept tokens first (sorted id order), filler pads the tail. A text
        // with more concepts than k_text would be undecodable; reject config.
        if (static_cast<int64_t>(txt.concept_subset.size()) > cfg.k_text)
            throw ConfigError("world.k_text too small for max_concepts");
        txt.tokens.reserve(cfg.k_text);
        for (int64_t c : txt.concept_subset) txt.tokens.push_back(concept_token(c));
        while (static_cast<int64_t>(txt.tokens.size()) < cfg.k_text)
            txt.tokens.push_back(filler_base(cfg.n_concepts) +
                                 static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n_filler))));
        u.texts.push_back(std::move(txt));
    }
    return u;
}

bool is_compatible(const ImageItem& v, const TextItem& t) {
    // Both sets are sorted; subset test by inclusion.
    return std::includes(v.concept_set.begin(), v.concept_set.end(), t.concept_subset.begin(),
                         t.concept_subset.end());
}

RelationStats relation_stats(const SemanticUniverse& u) {
    RelationStats st;
    for (const auto& v : u.images)
        for (const auto& t : u.texts)
            if (is_compatible(v, t)) ++st.n_relation;
    for (const auto& t : u.texts)
        if (t.positive_image >= 0) ++st.n_positives;
    if (st.n_relation == 0) throw DataError("degenerate universe: empty relation R, kappa undefined");
    st.rho = static_cast<double>(st.n_relation) /
             (static_cast<double>(u.n_images()) * static_cast<double>(u.n_texts()));
    st.kappa = static_cast<double>(st.n_positives) / static_cast<double>(st.n_relation);
    return st;
}

std::vector<int64_t> decode_concepts(const std::vector<int64_t>& tokens, int64_t n_concepts) {
    std::set<int64_t> out;
    for (int64_t tok : tokens)
        if (tok >= 1 && tok <= n_concepts) out.insert(tok - 1);
    return {out.begin(), out.end()};
}

void save_world(const SemanticUniverse& u, const std::string& path) {
    RelationStats st = relation_stats(u);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open world file for writing: " + path);

    json hdr = {
        {"type", "header"},
        {"version", 1},
        {"seed", u.seed},
        {"rho", st.rho},
        {"kappa", st.kappa},
        {"n_relation", st.n_relation},
        {"n_positives", st.n_positives},
        {"config",
         {{"n_concepts", u.config.n_concepts},
          {"n_images", u.config.n_images},
          {"n_texts", u.config.n_texts},
          {"d_latent", u.config.d_latent},
          {"d_img", u.config.d_img},
          {"k_text", u.config.k_text},
          {"vocab", u.config.vocab},
          {"noise_sigma", u.config.noise_sigma},
          {"max_concepts", u.config.max_concepts}}},
    };
    out << hdr.dump() << "\n";
    for (const auto& c : u.concepts)
        out << json{{"type", "concept"}, {"id", c.id}, {"prototype", c.prototype}}.dump() << "\n";
    for (const auto& v : u.images)
        out << json{{"type", "image"}, {"id", v.id}, {"concepts", v.concept_set}, {"feature", v.feature}}
                   .dump()
            << "\n";
    for (const auto& t : u.texts)
        out << json{{"type", "text"},
                    {"id", t.id},
                    {"concepts", t.concept_subset},
                    {"tokens", t.tokens},
                    {"positive_image", t.positive_image}}
                   .dump()
            << "\n";
    if (!out) throw IoError("write failure on world file: " + path);
}

SemanticUniverse load_world(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open world file: " + path);
    SemanticUniverse u;
    std::string line;
    bool have_header = false;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        const std::string type = j.value("type", "");
        if (type == "header") {
            if (j.value("version", 0) != 1)
                throw DataError(path + ": unsupported world file version");
            const json& c = j.at("config");
            u.config.n_concepts = c.at("n_concepts").get<int64_t>();
            u.config.n_images = c.at("n_images").get<int64_t>();
            u.config.n_texts = c.at("n_texts").get<int64_t>();
            u.config.d_latent = c.at("d_latent").get<int64_t>();
            u.config.d_img = c.at("d_img").get<int64_t>();
            u.config.k_text = c.at("k_text").get<int64_t>();
            u.config.vocab = c.at("vocab").get<int64_t>();
            u.config.noise_sigma = c.at("noise_sigma").get<double>();
            u.config.max_concepts = c.at("max_concepts").get<int64_t>();
            u.seed = j.at("seed").get<uint64_t>();
            have_header = true;
        } else if (type == "concept") {
            Concept c;
            c.id = j.at("id").get<int64_t>();
            c.prototype = j.at("prototype").get<std::vector<double>>();
            u.concepts.push_back(std::move(c));
        } else if (type == "image") {
            ImageItem v;
            v.id = j.at("id").get<int64_t>();
            v.concept_set = j.at("concepts").get<std::vector<int64_t>>();
            v.feature = j.at("feature").get<std::vector<double>>();
            u.images.push_back(std::move(v));
        } else if (type == "text") {
            TextItem t;
            t.id = j.at("id").get<int64_t>();
            t.concept_subset = j.at("concepts").get<std::vector<int64_t>>();
            t.tokens = j.at("tokens").get<std::vector<int64_t>>();
            t.positive_image = j.at("positive_image").get<int64_t>();
            u.texts.push_back(std::move(t));
        } else {
            throw DataError(path + ":" + std::to_string(lineno) + ": unknown record type '" + type + "'");
        }
    }
    if (!have_header) throw DataError(path + ": missing world header record");
    if (static_cast<int64_t>(u.images.size()) != u.config.n_images ||
        static_cast<int64_t>(u.texts.size()) != u.config.n_texts ||
        static_cast<int64_t>(u.concepts.size()) != u.config.n_concepts)
        throw DataError(path + ": item counts disagree with header config");
    return u;
}

uint64_t world_file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open world file: " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
    return h;
}

}  // namespace negmine::world
