#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "negmine/config.hpp"
#include "negmine/rng.hpp"

namespace negmine::world {

// Token layout inside the vocabulary of size W:
//   token 0                     -> the MLM mask token
//   tokens 1 .. n_concepts      -> one token per concept
//   tokens n_concepts+1 .. W-1  -> filler
inline constexpr int64_t kMaskToken = 0;
inline int64_t concept_token(int64_t concept_id) { return concept_id + 1; }
inline int64_t filler_base(int64_t n_concepts) { return n_concepts + 1; }

struct Concept {
    int64_t id = 0;
    std::vector<double> prototype;  // d_latent
};

struct ImageItem {
    int64_t id = 0;
    std::vector<int64_t> concept_set;  // sorted, distinct, 1..max_concepts
    std::vector<double> feature;       // d_img = sum of prototypes + noise
};

struct TextItem {
    int64_t id = 0;
    std::vector<int64_t> concept_subset;  // sorted; subset of the positive image's set
    std::vector<int64_t> tokens;          // k_text tokens encoding the subset + filler
    int64_t positive_image = -1;
};

struct SemanticUniverse {
    WorldConfig config;
    uint64_t seed = 0;
    std::vector<Concept> concepts;
    std::vector<ImageItem> images;
    std::vector<TextItem> texts;
    // positives[t] = labeled positive image of text t (== texts[t].positive_image)

    size_t n_images() const { return images.size(); }
    size_t n_texts() const { return texts.size(); }
};

struct RelationStats {
    double rho = 0.0;    // |R| / (|V| |T|)
    double kappa = 0.0;  // |P| / |R|
    int64_t n_relation = 0;
    int64_t n_positives = 0;
};

// Deterministic generation from (config, seed). Every text's concept subset
// is a uniformly drawn nonempty subset of its positive image's concepts, so
// generated texts are never pure filler (hand-built ones may be).
SemanticUniverse generate_universe(const WorldConfig& config, uint64_t seed);

// Ground-truth compatibility: t describes v iff t's concepts are all present
// in v. Pure set inclusion; the empty subset matches every image.
bool is_compatible(const ImageItem& v, const TextItem& t);

// Full-enumeration relation statistics. Throws DataError when |R| = 0
// (kappa undefined).
RelationStats relation_stats(const SemanticUniverse& u);

// Recover a text's concept subset from its token sequence alone.
std::vector<int64_t> decode_concepts(const std::vector<int64_t>& tokens, int64_t n_concepts);

// JSON-lines serialization: header record (config, seed, rho/kappa), then one
// record per concept/image/text.
void save_world(const SemanticUniverse& u, const std::string& path);
SemanticUniverse load_world(const std::string& path);

// FNV-1a over the file bytes; stamped into manifests and checkpoints so runs
// on different worlds are never silently compared.
uint64_t world_file_hash(const std::string& path);

}  // namespace negmine::world
