#include "fsl/episodes.hpp"

#include <algorithm>
#include <string>

#include "fsl/errors.hpp"

namespace fsl {

VectorDataset make_dataset(Matrix features, std::vector<int> labels) {
    if (features.rows() != labels.size())
        raise(ErrorCode::dimension, "dataset: " + std::to_string(labels.size()) + " labels for " +
                                        std::to_string(features.rows()) + " rows");
    if (features.rows() == 0) raise(ErrorCode::schema, "dataset: no rows");
    int max_label = 0;
    for (int y : labels) {
        if (y < 0) raise(ErrorCode::schema, "dataset: negative label " + std::to_string(y));
        max_label = std::max(max_label, y);
    }
    VectorDataset data;
    data.num_classes = max_label + 1;
    data.class_rows.resize(static_cast<size_t>(data.num_classes));
    for (size_t i = 0; i < labels.size(); ++i)
        data.class_rows[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
    for (int c = 0; c < data.num_classes; ++c)
        if (data.class_rows[static_cast<size_t>(c)].empty())
            raise(ErrorCode::schema, "dataset: class " + std::to_string(c) +
                                         " has no rows (labels must be dense)");
    data.features = std::move(features);
    data.labels = std::move(labels);
    data.source_ids.resize(static_cast<size_t>(data.num_classes));
    for (int c = 0; c < data.num_classes; ++c) data.source_ids[static_cast<size_t>(c)] = c;
    return data;
}

namespace {

// New dataset from a class subset, labels remapped to 0..k-1 in the order
// given. source_ids keeps the provenance chain.
VectorDataset take_classes(const VectorDataset& data, const std::vector<int>& classes) {
    size_t rows = 0;
    for (int c : classes) rows += data.class_rows[static_cast<size_t>(c)].size();
    Matrix features(rows, data.dim());
    std::vector<int> labels(rows);
    size_t r = 0;
    for (size_t k = 0; k < classes.size(); ++k) {
        for (int row : data.class_rows[static_cast<size_t>(classes[k])]) {
            for (size_t j = 0; j < data.dim(); ++j)
                features(r, j) = data.features(static_cast<size_t>(row), j);
            labels[r] = static_cast<int>(k);
            ++r;
        }
    }
    VectorDataset out = make_dataset(std::move(features), std::move(labels));
    for (size_t k = 0; k < classes.size(); ++k)
        out.source_ids[k] = data.source_ids[static_cast<size_t>(classes[k])];
    return out;
}

} // namespace

Splits make_splits(const VectorDataset& data, double seen_frac, double val_frac, Rng& rng) {
    if (seen_frac <= 0.0 || val_frac <= 0.0 || seen_frac + val_frac >= 1.0)
        raise(ErrorCode::config, "make_splits: fractions must be positive and sum below 1");
    int c = data.num_classes;
    int n_seen = static_cast<int>(seen_frac * c);
    int n_val = static_cast<int>(val_frac * c);
    int n_unseen = c - n_seen - n_val;
    if (n_seen < 1 || n_val < 1 || n_unseen < 1)
        raise(ErrorCode::config, "make_splits: " + std::to_string(c) +
                                     " classes leave an empty split at these fractions");
    std::vector<size_t> perm = rng.permutation(static_cast<size_t>(c));
    auto slice = [&](int begin, int count) {
        std::vector<int> ids(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) ids[static_cast<size_t>(i)] = static_cast<int>(perm[static_cast<size_t>(begin + i)]);
        return ids;
    };
    Splits splits;
    splits.seen = take_classes(data, slice(0, n_seen));
    splits.val = take_classes(data, slice(n_seen, n_val));
    splits.unseen = take_classes(data, slice(n_seen + n_val, n_unseen));
    return splits;
}

Episode sample_episode(const VectorDataset& data, int n_way, int m_shot, int q_queries, Rng& rng) {
    if (n_way < 2) raise(ErrorCode::sampling, "sample_episode: need at least 2 ways");
    if (m_shot < 1 || q_queries < 1)
        raise(ErrorCode::sampling, "sample_episode: shots and queries must be positive");
    if (n_way > data.num_classes)
        raise(ErrorCode::sampling, "sample_episode: " + std::to_string(n_way) + " ways from " +
                                       std::to_string(data.num_classes) + " classes");
    int per_class = m_shot + q_queries;
    std::vector<size_t> classes =
        rng.sample_without_replacement(static_cast<size_t>(data.num_classes),
                                       static_cast<size_t>(n_way));
    Episode ep;
    ep.n_way = n_way;
    ep.m_shot = m_shot;
    ep.q_queries = q_queries;
    ep.support_x = Matrix(static_cast<size_t>(n_way * m_shot), data.dim());
    ep.query_x = Matrix(static_cast<size_t>(n_way * q_queries), data.dim());
    ep.support_y.resize(static_cast<size_t>(n_way * m_shot));
    ep.query_y.resize(static_cast<size_t>(n_way * q_queries));
    ep.class_ids.resize(static_cast<size_t>(n_way));
    for (int k = 0; k < n_way; ++k) {
        const auto& rows = data.class_rows[classes[static_cast<size_t>(k)]];
        if (rows.size() < static_cast<size_t>(per_class))
            raise(ErrorCode::sampling,
                  "sample_episode: class " + std::to_string(classes[static_cast<size_t>(k)]) +
                      " has " + std::to_string(rows.size()) + " rows, need " +
                      std::to_string(per_class));
        std::vector<size_t> picks =
            rng.sample_without_replacement(rows.size(), static_cast<size_t>(per_class));
        for (int s = 0; s < m_shot; ++s) {
            size_t dst = static_cast<size_t>(k * m_shot + s);
            size_t src = static_cast<size_t>(rows[picks[static_cast<size_t>(s)]]);
            for (size_t j = 0; j < data.dim(); ++j) ep.support_x(dst, j) = data.features(src, j);
            ep.support_y[dst] = k;
        }
        for (int q = 0; q < q_queries; ++q) {
            size_t dst = static_cast<size_t>(k * q_queries + q);
            size_t src = static_cast<size_t>(rows[picks[static_cast<size_t>(m_shot + q)]]);
            for (size_t j = 0; j < data.dim(); ++j) ep.query_x(dst, j) = data.features(src, j);
            ep.query_y[dst] = k;
        }
        ep.class_ids[static_cast<size_t>(k)] = static_cast<int>(classes[static_cast<size_t>(k)]);
    }
    return ep;
}

VectorDataset gen_synthetic(int num_classes, int per_class, int dim, double spread,
                            double separation, Rng& rng) {
    if (num_classes < 2) raise(ErrorCode::config, "gen_synthetic: need at least 2 classes");
    if (per_class < 1 || dim < 1)
        raise(ErrorCode::config, "gen_synthetic: per_class and dim must be positive");
    if (spread < 0.0 || separation < 0.0)
        raise(ErrorCode::config, "gen_synthetic: spread and separation must be non-negative");
    Matrix means(static_cast<size_t>(num_classes), static_cast<size_t>(dim));
    for (size_t i = 0; i < means.size(); ++i)
        means.data()[i] = rng.uniform(-separation, separation);
    Matrix features(static_cast<size_t>(num_classes * per_class), static_cast<size_t>(dim));
    std::vector<int> labels(static_cast<size_t>(num_classes * per_class));
    size_t r = 0;
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            for (size_t j = 0; j < static_cast<size_t>(dim); ++j)
                features(r, j) = means(static_cast<size_t>(c), j) + spread * rng.normal();
            labels[r] = c;
            ++r;
        }
    return make_dataset(std::move(features), std::move(labels));
}

ClasswiseSplit split_per_class(const VectorDataset& data, int per_class) {
    if (per_class < 1) raise(ErrorCode::config, "split_per_class: per_class must be positive");
    std::vector<int> taken_rows, rest_rows;
    for (int c = 0; c < data.num_classes; ++c) {
        const auto& rows = data.class_rows[static_cast<size_t>(c)];
        if (rows.size() <= static_cast<size_t>(per_class))
            raise(ErrorCode::config, "split_per_class: class " + std::to_string(c) + " has only " +
                                         std::to_string(rows.size()) + " rows");
        for (size_t i = 0; i < rows.size(); ++i)
            (i < static_cast<size_t>(per_class) ? taken_rows : rest_rows).push_back(rows[i]);
    }
    auto build = [&](const std::vector<int>& rows) {
        Matrix features(rows.size(), data.dim());
        std::vector<int> labels(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            for (size_t j = 0; j < data.dim(); ++j)
                features(i, j) = data.features(static_cast<size_t>(rows[i]), j);
            labels[i] = data.labels[static_cast<size_t>(rows[i])];
        }
        VectorDataset out = make_dataset(std::move(features), std::move(labels));
        out.source_ids = data.source_ids;
        return out;
    };
    return ClasswiseSplit{build(taken_rows), build(rest_rows)};
}

} // namespace fsl
