#include "embprior/data.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "embprior/rng.hpp"

namespace embprior {

namespace {

Vec random_unit(Rng& rng, size_t d) {
    Vec v(d);
    double n2 = 0.0;
    do {
        for (size_t j = 0; j < d; ++j) v[j] = rng.normal();
        n2 = dot(v, v);
    } while (n2 == 0.0);
    double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return v;
}

// unit vector orthogonal to axis (random direction in the complement)
Vec random_unit_orthogonal(Rng& rng, const Vec& axis) {
    while (true) {
        Vec v = random_unit(rng, axis.size());
        double proj = dot(v, axis);
        for (size_t j = 0; j < v.size(); ++j) v[j] -= proj * axis[j];
        double n = norm(v);
        if (n > 1e-8) {
            for (double& x : v) x /= n;
            return v;
        }
    }
}

}  // namespace

EmbeddingDataset gen_synthetic(const SyntheticSpec& spec) {
    if (spec.d < 2 || spec.k_true < 1 || spec.n < 1 || spec.sigma_img < 0.0 || spec.sigma_txt < 0.0 ||
        spec.gap < 0.0 || !(spec.cone_deg > 0.0 && spec.cone_deg < 90.0))
        throw std::invalid_argument("gen_synthetic: invalid spec");
    const size_t d = static_cast<size_t>(spec.d);
    Rng rng(split_seed(spec.seed, 100));

    Vec axis = random_unit(rng, d);
    double cos_cap = std::cos(spec.cone_deg * M_PI / 180.0);
    std::vector<Vec> concepts;
    concepts.reserve(static_cast<size_t>(spec.k_true));
    for (int c = 0; c < spec.k_true; ++c) {
        // uniform on the cap: cos(theta) uniform in [cos_cap, 1]
        double ct = cos_cap + (1.0 - cos_cap) * rng.uniform01();
        double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
        Vec w = random_unit_orthogonal(rng, axis);
        Vec concept(d);
        for (size_t j = 0; j < d; ++j) concept[j] = ct * axis[j] + st * w[j];
        concepts.push_back(std::move(concept));
    }
    Vec gap_dir = random_unit_orthogonal(rng, axis);

    EmbeddingDataset ds;
    ds.image_embeddings = Matrix(static_cast<size_t>(spec.n), d);
    ds.cond_embeddings = Matrix(static_cast<size_t>(spec.n), d);
    ds.labels.resize(static_cast<size_t>(spec.n));
    Vec buf(d);
    for (int i = 0; i < spec.n; ++i) {
        int c = static_cast<int>(rng.uniform_int(0, spec.k_true - 1));
        ds.labels[static_cast<size_t>(i)] = c;
        const Vec& concept = concepts[static_cast<size_t>(c)];

        for (size_t j = 0; j < d; ++j) buf[j] = concept[j] + spec.sigma_img * rng.normal();
        Vec z0 = normalized(buf);
        std::memcpy(ds.image_embeddings.row(static_cast<size_t>(i)), z0.data(), d * sizeof(double));

        for (size_t j = 0; j < d; ++j) buf[j] = concept[j] + spec.gap * gap_dir[j] + spec.sigma_txt * rng.normal();
        Vec cond = normalized(buf);
        std::memcpy(ds.cond_embeddings.row(static_cast<size_t>(i)), cond.data(), d * sizeof(double));
    }
    return ds;
}

DataStats data_stats(const Matrix& embeddings) {
    if (embeddings.rows < 2) throw std::invalid_argument("data_stats: need at least 2 rows");
    const size_t n = embeddings.rows, d = embeddings.cols;
    DataStats st;
    st.mu.assign(d, 0.0);
    st.sigma.assign(d, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* row = embeddings.row(i);
        for (size_t j = 0; j < d; ++j) st.mu[j] += row[j];
    }
    for (size_t j = 0; j < d; ++j) st.mu[j] /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const double* row = embeddings.row(i);
        for (size_t j = 0; j < d; ++j) {
            double dv = row[j] - st.mu[j];
            st.sigma[j] += dv * dv;
        }
    }
    for (size_t j = 0; j < d; ++j) st.sigma[j] = std::sqrt(st.sigma[j] / static_cast<double>(n - 1));
    return st;
}

namespace {
constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("emb: truncated file");
    return v;
}
}  // namespace

void write_emb(const std::string& path, const Matrix& m) {
    if (m.rows > UINT32_MAX || m.cols > UINT32_MAX || (m.cols != 0 && m.rows > UINT32_MAX / std::max<size_t>(m.cols, 1)))
        throw std::invalid_argument("write_emb: dimension overflow");
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("write_emb: cannot open " + tmp);
        os.write(kEmbMagic, sizeof(kEmbMagic));
        write_u32(os, 1);
        write_u32(os, static_cast<uint32_t>(m.rows));
        write_u32(os, static_cast<uint32_t>(m.cols));
        std::vector<float> rowbuf(m.cols);
        for (size_t i = 0; i < m.rows; ++i) {
            const double* row = m.row(i);
            for (size_t j = 0; j < m.cols; ++j) rowbuf[j] = static_cast<float>(row[j]);
            os.write(reinterpret_cast<const char*>(rowbuf.data()),
                     static_cast<std::streamsize>(m.cols * sizeof(float)));
        }
        if (!os) throw std::runtime_error("write_emb: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Matrix read_emb(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_emb: cannot open " + path);
    char magic[sizeof(kEmbMagic)];
    is.read(magic, sizeof(kEmbMagic));
    if (!is || std::memcmp(magic, kEmbMagic, sizeof(kEmbMagic)) != 0)
        throw std::runtime_error("read_emb: bad magic in " + path);
    uint32_t version = read_u32(is);
    if (version != 1) throw std::runtime_error("read_emb: unsupported version " + std::to_string(version));
    uint32_t n = read_u32(is), d = read_u32(is);
    Matrix m(n, d);
    std::vector<float> rowbuf(d);
    for (uint32_t i = 0; i < n; ++i) {
        is.read(reinterpret_cast<char*>(rowbuf.data()), static_cast<std::streamsize>(d * sizeof(float)));
        if (!is) throw std::runtime_error("read_emb: truncated file " + path);
        double* row = m.row(i);
        for (uint32_t j = 0; j < d; ++j) row[j] = static_cast<double>(rowbuf[j]);
    }
    return m;
}

}  // namespace embprior
