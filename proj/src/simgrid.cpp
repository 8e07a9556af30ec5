#include "negmine/simgrid.hpp"

#include <algorithm>
#include <numeric>

#include "negmine/common.hpp"
#include "negmine/mathx.hpp"

namespace negmine::simgrid {

Mat build_similarity(const EmbeddingCache& cache, const SearchSpace& space) {
    const size_t n = space.size();
    const size_t d = cache.img.cols;
    if (cache.txt.rows != cache.img.rows || cache.txt.cols != d)
        throw ContractError("build_similarity: cache shape mismatch");
    for (int64_t idx : space.indices)
        if (idx < 0 || idx >= static_cast<int64_t>(cache.size()))
            throw ContractError("build_similarity: space index outside cache");

    Mat s(n, n);
    for (size_t i = 0; i < n; ++i) {
        const auto gi = static_cast<size_t>(space.indices[i]);
        for (size_t j = 0; j < n; ++j) {
            const auto gj = static_cast<size_t>(space.indices[j]);
            s(i, j) = dot(cache.img.row(gi), cache.txt.row(gj), d) +
                      dot(cache.txt.row(gi), cache.img.row(gj), d);
        }
    }
    return s;
}

SimilaritySummary summarize(const Mat& s, int64_t m, double tau_n) {
    const size_t n = s.rows;
    if (s.cols != n) throw ContractError("summarize: S must be square");
    if (n < 2) throw ContractError("summarize: degenerate space, need at least 2 items");
    if (m < 2 || m > static_cast<int64_t>(n))
        throw ContractError("summarize: need 2 <= m <= |M|");
    if (!(tau_n > 0.0)) throw ContractError("summarize: softmax temperature must be positive");

    SimilaritySummary out;
    out.raw = s;
    out.m = m;
    const auto mm = static_cast<size_t>(m);
    out.presoft = Mat(n, mm);
    out.summary = Mat(n, mm);

    std::vector<double> row(n - 1);
    std::vector<double> soft(mm);
    for (size_t i = 0; i < n; ++i) {
        size_t w = 0;
        for (size_t j = 0; j < n; ++j)
            if (j != i) row[w++] = s(i, j);
        std::sort(row.begin(), row.end());
        for (size_t l = 0; l < mm; ++l) {
            double q = static_cast<double>(l) / static_cast<double>(mm - 1);
            out.presoft(i, l) = row[nearest_rank(q, row.size())];
        }
        for (size_t l = 0; l < mm; ++l) soft[l] = out.presoft(i, l) / tau_n;
        softmax_inplace(soft);
        for (size_t l = 0; l < mm; ++l) out.summary(i, l) = soft[l];
    }
    return out;
}

SortedSummary sort_rows(const SimilaritySummary& summary) {
    const size_t n = summary.presoft.rows;
    const size_t m = summary.presoft.cols;

    SortedSummary out;
    out.perm.resize(n);
    std::iota(out.perm.begin(), out.perm.end(), size_t{0});
    std::sort(out.perm.begin(), out.perm.end(), [&](size_t a, size_t b) {
        const double* ra = summary.presoft.row(a);
        const double* rb = summary.presoft.row(b);
        for (size_t l = 0; l < m; ++l) {
            if (ra[l] < rb[l]) return true;
            if (ra[l] > rb[l]) return false;
        }
        return a < b;
    });

    out.rows = Mat(n, summary.summary.cols);
    out.inv.resize(n);
    for (size_t r = 0; r < n; ++r) {
        out.inv[out.perm[r]] = r;
        const double* src = summary.summary.row(out.perm[r]);
        std::copy(src, src + summary.summary.cols, out.rows.row(r));
    }
    return out;
}

}  // namespace negmine::simgrid
