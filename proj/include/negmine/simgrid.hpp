#pragma once

#include <cstdint>
#include <vector>

#include "negmine/linalg.hpp"

namespace negmine::simgrid {

// Unit-norm embeddings for every pair index, snapshotted at the end of the
// previous epoch. Row i of img and txt belong to labeled pair i.
struct EmbeddingCache {
    Mat img;  // n x d_emb
    Mat txt;
    int64_t epoch_tag = -1;

    size_t size() const { return img.rows; }
};

// One partition block of the epoch's (shuffled) pair order.
struct SearchSpace {
    std::vector<int64_t> indices;  // global pair ids, |M| of them
    size_t size() const { return indices.size(); }
};

struct SimilaritySummary {
    Mat raw;      // |M| x |M| fused similarity S
    Mat summary;  // |M| x m, softmax-normalized quantile rows
    Mat presoft;  // |M| x m, pre-softmax quantile values (non-decreasing rows)
    int64_t m = 0;
};

struct SortedSummary {
    Mat rows;                   // summary rows reordered
    std::vector<size_t> perm;   // rows.row(r) == summary.row(perm[r])
    std::vector<size_t> inv;    // inv[perm[r]] == r
};

// S[i][j] = cos(img_i, txt_j) + cos(txt_i, img_j) over the space's indices.
// Cache rows are unit-norm so each cosine is a dot product; entries lie in
// [-2, 2]. The diagonal is present but excluded from summarization/selection.
Mat build_similarity(const EmbeddingCache& cache, const SearchSpace& space);

// Per row: m evenly spaced quantile levels l/(m-1) of the row with the
// diagonal entry removed, nearest-rank rule, then softmax (temperature tau_n).
SimilaritySummary summarize(const Mat& s, int64_t m, double tau_n = 1.0);

// Reorder rows lexicographically by pre-softmax quantile vector (ties by
// original index); permutation returned so per-anchor outputs can be unsorted.
SortedSummary sort_rows(const SimilaritySummary& summary);

}  // namespace negmine::simgrid
