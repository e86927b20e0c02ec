#pragma once

#include <cstdint>
#include <string>

#include "embprior/cluster_bank.hpp"

namespace embprior {

// Synthetic paired embeddings mimicking a contrastive encoder's output
// geometry: image embeddings live inside a narrow cone on the unit sphere
// and condition embeddings are offset from them by a shared gap direction.
struct SyntheticSpec {
    int d = 16;
    int k_true = 8;       // concept directions
    int n = 10000;        // pair count
    double sigma_img = 0.1;
    double sigma_txt = 0.1;
    double gap = 0.5;     // modality-gap magnitude along a fixed direction
    double cone_deg = 30.0;  // angular radius of the concept cap
    uint64_t seed = 0;
};

struct EmbeddingDataset {
    Matrix image_embeddings;  // n x d unit rows (z_0)
    Matrix cond_embeddings;   // n x d unit rows (text-side stand-ins)
    std::vector<int> labels;  // true concept per pair
};

// Concepts are unit vectors within a cone_deg cap around a random axis; the
// gap direction is a fixed unit vector orthogonal to the axis. Per pair:
//   z0   = normalize(concept + sigma_img * eps)
//   cond = normalize(concept + gap * g + sigma_txt * eps')
// Deterministic given spec.seed.
EmbeddingDataset gen_synthetic(const SyntheticSpec& spec);

// Per-dimension mean and sample standard deviation (n-1 denominator).
struct DataStats {
    Vec mu;
    Vec sigma;
};
DataStats data_stats(const Matrix& embeddings);

// Embedding file: magic "EMB1", u32 version=1, u32 n, u32 d, then n*d
// little-endian float32, row major. Exact float32 round-trip.
void write_emb(const std::string& path, const Matrix& m);
Matrix read_emb(const std::string& path);

}  // namespace embprior
