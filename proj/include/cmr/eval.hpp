#pragma once

#include <string>
#include <vector>

#include "cmr/tensor.hpp"

namespace cmr {

// Per-instance unit vectors, one per configured matching level.
struct LevelEmbedding {
    std::vector<std::vector<double>> levels;
};

struct RetrievalReport {
    std::string direction;  // "v2t" or "t2v"
    double r1 = 0, r5 = 0, r10 = 0;
    double medr = 0;
    double rsum = 0;  // sum of all six R@K across both directions
};

// Sum of per-level cosines, optionally weighted.
double fuse_similarity(const LevelEmbedding& a, const LevelEmbedding& b,
                       const std::vector<double>& level_weights = {});

// rank[i] = 1 + #{j : score(q_i, g_j) > score(q_i, g_i)}
//             + #{j < i : score == score(q_i, g_i)}   (index tie-break)
std::vector<std::size_t> rank_queries(const std::vector<LevelEmbedding>& queries,
                                      const std::vector<LevelEmbedding>& gallery,
                                      const std::vector<double>& level_weights = {});

RetrievalReport metrics(const std::vector<std::size_t>& ranks, const std::string& direction);

// Fills in the cross-direction rsum on both reports.
void finalize_rsum(RetrievalReport& v2t, RetrievalReport& t2v);

std::string format_report_line(const RetrievalReport& r);

}  // namespace cmr
