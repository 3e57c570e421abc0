#include <algorithm>
#include <set>
#include <vector>

#include "doctest.h"

#include "fsl/episodes.hpp"
#include "helpers.hpp"

using namespace fsl;
using fsl_test::error_code_of;

TEST_CASE("make_dataset validates labels and builds the class index") {
    Matrix x(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
    VectorDataset d = make_dataset(x, {1, 0, 1, 2});
    CHECK(d.num_classes == 3);
    REQUIRE(d.class_rows.size() == 3);
    CHECK(d.class_rows[0] == std::vector<int>{1});
    CHECK(d.class_rows[1] == std::vector<int>{0, 2});
    CHECK(d.class_rows[2] == std::vector<int>{3});
    CHECK(d.source_ids == std::vector<int>{0, 1, 2});

    CHECK(error_code_of([&] { make_dataset(x, {0, 1}); }) == ErrorCode::dimension);
    CHECK(error_code_of([&] { make_dataset(Matrix(), {}); }) == ErrorCode::schema);
    CHECK(error_code_of([&] { make_dataset(x, {0, -1, 0, 1}); }) == ErrorCode::schema);
    // A hole in the label range means the dense id contract is broken.
    CHECK(error_code_of([&] { make_dataset(x, {0, 1, 3, 3}); }) == ErrorCode::schema);
}

TEST_CASE("synthetic generation produces the promised layout") {
    Rng rng(7);
    VectorDataset d = gen_synthetic(5, 8, 3, 0.1, 2.0, rng);
    CHECK(d.num_classes == 5);
    CHECK(d.rows() == 40);
    CHECK(d.dim() == 3);
    for (int c = 0; c < 5; ++c) CHECK(d.class_rows[static_cast<size_t>(c)].size() == 8);
    for (size_t i = 0; i < d.rows(); ++i)
        CHECK(d.labels[i] == static_cast<int>(i) / 8);

    // Same seed, same data.
    Rng rng2(7);
    VectorDataset d2 = gen_synthetic(5, 8, 3, 0.1, 2.0, rng2);
    for (size_t i = 0; i < d.features.size(); ++i)
        CHECK(d.features.data()[i] == d2.features.data()[i]);

    // spread 0 collapses every class onto its mean.
    Rng rng3(8);
    VectorDataset tight = gen_synthetic(3, 4, 2, 0.0, 1.0, rng3);
    for (int c = 0; c < 3; ++c) {
        const auto& rows = tight.class_rows[static_cast<size_t>(c)];
        for (size_t k = 1; k < rows.size(); ++k)
            for (size_t j = 0; j < 2; ++j)
                CHECK(tight.features(static_cast<size_t>(rows[k]), j) ==
                      tight.features(static_cast<size_t>(rows[0]), j));
    }

    Rng r(1);
    CHECK(error_code_of([&] { gen_synthetic(1, 4, 2, 0.1, 1.0, r); }) == ErrorCode::config);
    CHECK(error_code_of([&] { gen_synthetic(3, 0, 2, 0.1, 1.0, r); }) == ErrorCode::config);
    CHECK(error_code_of([&] { gen_synthetic(3, 4, 0, 0.1, 1.0, r); }) == ErrorCode::config);
    CHECK(error_code_of([&] { gen_synthetic(3, 4, 2, -0.5, 1.0, r); }) == ErrorCode::config);
}

TEST_CASE("splits partition classes and remap labels densely") {
    Rng rng(11);
    VectorDataset d = gen_synthetic(10, 6, 4, 0.2, 1.5, rng);
    Rng split_rng(12);
    Splits s = make_splits(d, 0.5, 0.2, split_rng);
    CHECK(s.seen.num_classes == 5);
    CHECK(s.val.num_classes == 2);
    CHECK(s.unseen.num_classes == 3);
    CHECK(s.seen.rows() + s.val.rows() + s.unseen.rows() == d.rows());

    // source_ids cover all original classes exactly once.
    std::set<int> sources;
    for (const auto* part : {&s.seen, &s.val, &s.unseen})
        for (int id : part->source_ids) sources.insert(id);
    CHECK(sources.size() == 10);
    CHECK(*sources.begin() == 0);
    CHECK(*sources.rbegin() == 9);

    // Remapped labels stay dense and rows carry their original features.
    for (const auto* part : {&s.seen, &s.val, &s.unseen}) {
        for (size_t i = 0; i < part->rows(); ++i) {
            int label = part->labels[i];
            REQUIRE(label >= 0);
            REQUIRE(label < part->num_classes);
            int src_class = part->source_ids[static_cast<size_t>(label)];
            // Every feature row must exist somewhere in the source class.
            bool found = false;
            for (int r : d.class_rows[static_cast<size_t>(src_class)]) {
                bool same = true;
                for (size_t j = 0; j < d.dim(); ++j)
                    if (d.features(static_cast<size_t>(r), j) != part->features(i, j)) {
                        same = false;
                        break;
                    }
                if (same) {
                    found = true;
                    break;
                }
            }
            CHECK(found);
        }
    }

    // Same rng seed gives the same partition.
    Rng again(12);
    Splits s2 = make_splits(d, 0.5, 0.2, again);
    CHECK(s2.seen.source_ids == s.seen.source_ids);
    CHECK(s2.unseen.source_ids == s.unseen.source_ids);

    Rng r(1);
    CHECK(error_code_of([&] { make_splits(d, 0.0, 0.2, r); }) == ErrorCode::config);
    CHECK(error_code_of([&] { make_splits(d, 0.9, 0.1, r); }) == ErrorCode::config);
    CHECK(error_code_of([&] { make_splits(d, 0.5, 0.5, r); }) == ErrorCode::config);
}

TEST_CASE("split fractions truncate on the class count") {
    Rng rng(13);
    VectorDataset d = gen_synthetic(60, 2, 2, 0.1, 1.0, rng);
    Rng split_rng(14);
    Splits s = make_splits(d, 0.5, 0.1667, split_rng);
    CHECK(s.seen.num_classes == 30);
    CHECK(s.val.num_classes == 10);
    CHECK(s.unseen.num_classes == 20);
}

TEST_CASE("episodes keep support and query disjoint within classes") {
    Rng rng(21);
    VectorDataset d = gen_synthetic(6, 10, 3, 0.3, 1.0, rng);
    Rng ep_rng(22);
    Episode ep = sample_episode(d, 4, 2, 3, ep_rng);
    CHECK(ep.n_way == 4);
    CHECK(ep.m_shot == 2);
    CHECK(ep.q_queries == 3);
    REQUIRE(ep.support_x.rows() == 8);
    REQUIRE(ep.query_x.rows() == 12);
    CHECK(ep.support_y == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});
    CHECK(ep.query_y == std::vector<int>{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3});
    REQUIRE(ep.class_ids.size() == 4);
    std::set<int> distinct(ep.class_ids.begin(), ep.class_ids.end());
    CHECK(distinct.size() == 4);
    for (int c : ep.class_ids) {
        CHECK(c >= 0);
        CHECK(c < 6);
    }

    // No support row may reappear as a query row of the same class.
    auto row_of = [&](const Matrix& m, size_t i) {
        std::vector<double> v(m.cols());
        for (size_t j = 0; j < m.cols(); ++j) v[j] = m(i, j);
        return v;
    };
    for (size_t si = 0; si < ep.support_x.rows(); ++si)
        for (size_t qi = 0; qi < ep.query_x.rows(); ++qi)
            if (ep.support_y[si] == ep.query_y[qi])
                CHECK(row_of(ep.support_x, si) != row_of(ep.query_x, qi));

    // Same rng state, same episode.
    Rng ep_rng2(22);
    Episode ep2 = sample_episode(d, 4, 2, 3, ep_rng2);
    CHECK(ep2.class_ids == ep.class_ids);
    for (size_t i = 0; i < ep.support_x.size(); ++i)
        CHECK(ep2.support_x.data()[i] == ep.support_x.data()[i]);
}

TEST_CASE("episode sampling rejects impossible requests") {
    Rng rng(31);
    VectorDataset d = gen_synthetic(4, 5, 2, 0.2, 1.0, rng);
    Rng r(32);
    CHECK(error_code_of([&] { sample_episode(d, 1, 2, 2, r); }) == ErrorCode::sampling);
    CHECK(error_code_of([&] { sample_episode(d, 3, 0, 2, r); }) == ErrorCode::sampling);
    CHECK(error_code_of([&] { sample_episode(d, 3, 2, 0, r); }) == ErrorCode::sampling);
    CHECK(error_code_of([&] { sample_episode(d, 5, 2, 2, r); }) == ErrorCode::sampling);
    // 5 rows per class cannot cover 3 shots + 3 queries.
    CHECK(error_code_of([&] { sample_episode(d, 3, 3, 3, r); }) == ErrorCode::sampling);
}

TEST_CASE("per-class holdout takes the first rows of every class") {
    Rng rng(41);
    VectorDataset d = gen_synthetic(3, 6, 2, 0.2, 1.0, rng);
    ClasswiseSplit cs = split_per_class(d, 2);
    CHECK(cs.taken.num_classes == 3);
    CHECK(cs.rest.num_classes == 3);
    CHECK(cs.taken.rows() == 6);
    CHECK(cs.rest.rows() == 12);
    for (int c = 0; c < 3; ++c) {
        int first = d.class_rows[static_cast<size_t>(c)][0];
        int taken_first = cs.taken.class_rows[static_cast<size_t>(c)][0];
        for (size_t j = 0; j < 2; ++j)
            CHECK(cs.taken.features(static_cast<size_t>(taken_first), j) ==
                  d.features(static_cast<size_t>(first), j));
    }
    CHECK(cs.taken.source_ids == d.source_ids);
    CHECK(cs.rest.source_ids == d.source_ids);

    CHECK(error_code_of([&] { split_per_class(d, 6); }) == ErrorCode::config);
    CHECK(error_code_of([&] { split_per_class(d, 0); }) == ErrorCode::config);
}
