#include "cmr/eval.hpp"

#include <algorithm>
#include <cstdio>

#include "cmr/errors.hpp"

namespace cmr {

double fuse_similarity(const LevelEmbedding& a, const LevelEmbedding& b,
                       const std::vector<double>& level_weights) {
    if (a.levels.size() != b.levels.size())
        throw ConfigError("fuse_similarity: level count mismatch");
    if (!level_weights.empty() && level_weights.size() != a.levels.size())
        throw ConfigError("fuse_similarity: weight count mismatch");
    double s = 0.0;
    for (std::size_t l = 0; l < a.levels.size(); ++l) {
        const auto& va = a.levels[l];
        const auto& vb = b.levels[l];
        if (va.size() != vb.size())
            throw ConfigError("fuse_similarity: level dimension mismatch");
        double c = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) c += va[i] * vb[i];
        s += c * (level_weights.empty() ? 1.0 : level_weights[l]);
    }
    return s;
}

std::vector<std::size_t> rank_queries(const std::vector<LevelEmbedding>& queries,
                                      const std::vector<LevelEmbedding>& gallery,
                                      const std::vector<double>& level_weights) {
    if (gallery.empty()) throw InputError("rank_queries: empty gallery");
    if (queries.size() != gallery.size())
        throw InputError("rank_queries: queries and gallery must be index-aligned");
    std::size_t n = queries.size();
    std::vector<std::size_t> ranks(n);
    for (std::size_t i = 0; i < n; ++i) {
        double true_score = fuse_similarity(queries[i], gallery[i], level_weights);
        std::size_t r = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double s = fuse_similarity(queries[i], gallery[j], level_weights);
            if (s > true_score || (s == true_score && j < i)) ++r;
        }
        ranks[i] = r;
    }
    return ranks;
}

RetrievalReport metrics(const std::vector<std::size_t>& ranks, const std::string& direction) {
    if (ranks.empty()) throw InputError("metrics on empty rank list");
    RetrievalReport rep;
    rep.direction = direction;
    double n = static_cast<double>(ranks.size());
    std::size_t c1 = 0, c5 = 0, c10 = 0;
    for (auto r : ranks) {
        if (r <= 1) ++c1;
        if (r <= 5) ++c5;
        if (r <= 10) ++c10;
    }
    rep.r1 = 100.0 * static_cast<double>(c1) / n;
    rep.r5 = 100.0 * static_cast<double>(c5) / n;
    rep.r10 = 100.0 * static_cast<double>(c10) / n;
    std::vector<std::size_t> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    std::size_t m = sorted.size();
    rep.medr = (m % 2 == 1)
                   ? static_cast<double>(sorted[m / 2])
                   : (static_cast<double>(sorted[m / 2 - 1]) +
                      static_cast<double>(sorted[m / 2])) / 2.0;
    rep.rsum = rep.r1 + rep.r5 + rep.r10;  // finalized across directions later
    return rep;
}

void finalize_rsum(RetrievalReport& v2t, RetrievalReport& t2v) {
    double total = v2t.r1 + v2t.r5 + v2t.r10 + t2v.r1 + t2v.r5 + t2v.r10;
    v2t.rsum = total;
    t2v.rsum = total;
}

std::string format_report_line(const RetrievalReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "dir=%s r1=%.10g r5=%.10g r10=%.10g medr=%.10g rsum=%.10g",
                  r.direction.c_str(), r.r1, r.r5, r.r10, r.medr, r.rsum);
    return buf;
}

}  // namespace cmr
