#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace iotminer;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> scale(0.01, 1e4), shift(-1e3, 1e3);
    Matrix m(rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        const double s = scale(rng), o = shift(rng);
        for (std::size_t r = 0; r < rows; ++r) m(r, c) = o + s * n(rng);
    }
    return m;
}

double col_mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double col_pstd(const std::vector<double>& v) {
    const double m = col_mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

SensorFrame frame_of(const std::vector<double>& v, const std::vector<double>& seconds) {
    SensorFrame f;
    for (double s : seconds) f.timestamps.push_back(fixtures::at("2024-10-01T00:00:00Z") + Duration{static_cast<long long>(s * 1000)});
    f.channels.push_back({"x", ChannelKind::Numeric, ChannelRole::Sensor, v, {}});
    return f;
}

} // namespace

TEST(Normalization, RobustExample) {
    const auto m = Matrix::from_column(std::vector<double>{1, 2, 3, 4, 100});
    const auto out = apply_normalizer(m, fit_normalizer(m, NormalizationKind::Robust));
    EXPECT_EQ(out.column(0), (std::vector<double>{-1, -0.5, 0, 0.5, 48.5}));
}

TEST(Normalization, StandardHasZeroMeanUnitStd) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = random_matrix(rng, 20 + trial, 4);
        const auto out = apply_normalizer(m, fit_normalizer(m, NormalizationKind::Standard));
        for (std::size_t c = 0; c < out.cols(); ++c) {
            EXPECT_LT(std::abs(col_mean(out.column(c))), 1e-9);
            EXPECT_LT(std::abs(col_pstd(out.column(c)) - 1.0), 1e-9);
        }
    }
}

TEST(Normalization, MinMaxStaysInUnitInterval) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = random_matrix(rng, 30, 3);
        const auto out = apply_normalizer(m, fit_normalizer(m, NormalizationKind::MinMax));
        for (std::size_t c = 0; c < out.cols(); ++c) {
            const auto col = out.column(c);
            EXPECT_EQ(*std::min_element(col.begin(), col.end()), 0.0);
            EXPECT_EQ(*std::max_element(col.begin(), col.end()), 1.0);
            for (double v : col) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
        }
    }
}

TEST(Normalization, ConstantColumnsBecomeZero) {
    const auto m = Matrix::from_column(std::vector<double>{5, 5, 5});
    for (auto k : {NormalizationKind::Standard, NormalizationKind::MinMax, NormalizationKind::Robust}) {
        const auto out = apply_normalizer(m, fit_normalizer(m, k));
        EXPECT_EQ(out.column(0), (std::vector<double>{0, 0, 0}));
    }
}

TEST(Normalization, ColumnCountMismatch) {
    const auto n = fit_normalizer(Matrix(3, 2, 1.0), NormalizationKind::Standard);
    try {
        apply_normalizer(Matrix(3, 3, 1.0), n);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ColumnCountMismatch);
    }
}

TEST(Normalization, NamesRoundTrip) {
    for (auto k : {NormalizationKind::None, NormalizationKind::Standard, NormalizationKind::MinMax, NormalizationKind::Robust})
        EXPECT_EQ(parse_normalization(to_string(k)), k);
}

TEST(Features, DifferentialCode) {
    const std::vector<double> s{1, 1, 2, 2.05, 5};
    EXPECT_EQ(differential_code(s), (std::vector<double>{0, 0, 1, 1, 1}));
    EXPECT_EQ(differential_code(s, 0.1), (std::vector<double>{0, 0, 1, 0, 1}));
    EXPECT_THROW(differential_code(std::vector<double>{1}), Error);
}

TEST(Features, DerivativesUseStepDurations) {
    const std::vector<double> s{0, 2, 8, 8};
    const std::vector<double> dt{1, 2, 0.5};
    EXPECT_EQ(derivative(s, dt, 1), (std::vector<double>{0, 2, 3, 0}));
    // second: (3 - 2) / 2, (0 - 3) / 0.5
    EXPECT_EQ(derivative(s, dt, 2), (std::vector<double>{0, 0, 0.5, -6}));
}

TEST(Features, DerivativeErrors) {
    auto code = [](auto f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::IoError;
    };
    EXPECT_EQ(code([] { derivative(std::vector<double>{1, 2}, std::vector<double>{0.0}, 1); }), ErrorCode::NonPositiveDt);
    EXPECT_EQ(code([] { derivative(std::vector<double>{1, 2}, std::vector<double>{1.0}, 2); }), ErrorCode::SeriesTooShort);
    EXPECT_EQ(code([] { derivative(std::vector<double>{1, 2, 3}, std::vector<double>{1.0}, 1); }), ErrorCode::LengthMismatch);
}

TEST(Features, SlidingAggregateAgainstBruteForce) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10, 10);
    std::vector<double> s(40);
    for (auto& v : s) v = u(rng);
    for (std::size_t w : {1u, 3u, 7u, 40u}) {
        const auto mean = sliding_aggregate(s, w, WindowStat::Mean);
        const auto sd = sliding_aggregate(s, w, WindowStat::Std);
        const auto mn = sliding_aggregate(s, w, WindowStat::Min);
        const auto mx = sliding_aggregate(s, w, WindowStat::Max);
        for (std::size_t i = 0; i < s.size(); ++i) {
            const std::size_t start = i + 1 >= w ? i + 1 - w : 0;
            std::vector<double> win(s.begin() + static_cast<long>(start), s.begin() + static_cast<long>(i) + 1);
            EXPECT_NEAR(mean[i], col_mean(win), 1e-12);
            EXPECT_NEAR(sd[i], col_pstd(win), 1e-12);
            EXPECT_EQ(mn[i], *std::min_element(win.begin(), win.end()));
            EXPECT_EQ(mx[i], *std::max_element(win.begin(), win.end()));
        }
    }
}

TEST(Features, MatrixColumnOrderAndNames) {
    const auto f = frame_of({0, 1, 4, 9}, {0, 1, 2, 3});
    FeatureSpec spec;
    spec.base_channels = {"x"};
    spec.add_differential_coding = true;
    spec.derivative_orders = {2, 1};
    spec.window = 2;
    spec.window_stats = {WindowStat::Max, WindowStat::Mean};
    const auto fm = build_feature_matrix(f, spec);
    EXPECT_EQ(fm.column_names,
              (std::vector<std::string>{"x", "x__diffcode", "x__deriv1", "x__deriv2", "x__mean_w2", "x__max_w2"}));
    EXPECT_EQ(fm.rows.column(2), (std::vector<double>{0, 1, 3, 5}));
    EXPECT_EQ(fm.rows.column(3), (std::vector<double>{0, 0, 2, 2}));
    EXPECT_EQ(fm.rows.column(4), (std::vector<double>{0, 0.5, 2.5, 6.5}));
}

TEST(Features, MissingValuesRejected) {
    const auto f = frame_of({0, std::numeric_limits<double>::quiet_NaN(), 1}, {0, 1, 2});
    FeatureSpec spec;
    spec.base_channels = {"x"};
    try {
        build_feature_matrix(f, spec);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingValues);
    }
}

TEST(Features, SpecJsonRoundTrip) {
    FeatureSpec spec;
    spec.base_channels = {"a", "b"};
    spec.add_differential_coding = true;
    spec.differential_epsilon = 0.5;
    spec.derivative_orders = {1};
    spec.window = 5;
    spec.window_stats = {WindowStat::Std};
    const auto back = feature_spec_from_json(to_json(spec));
    EXPECT_EQ(to_json(back), to_json(spec));
}

TEST(Features, CsvAndSidecarRoundTrip) {
    std::mt19937_64 rng(6);
    FeatureMatrix fm;
    fm.rows = random_matrix(rng, 25, 3);
    for (int i = 0; i < 25; ++i) fm.row_timestamps.push_back(fixtures::at("2024-10-01T00:00:00Z") + Duration{i * 1000});
    fm.column_names = {"a", "b", "c"};
    const auto normalized = normalize(fm, NormalizationKind::Robust);
    const auto side = feature_sidecar(normalized);
    const auto back = read_feature_csv(write_feature_csv(normalized), &side);
    EXPECT_EQ(back.column_names, normalized.column_names);
    EXPECT_EQ(back.row_timestamps, normalized.row_timestamps);
    EXPECT_EQ(back.normalization.kind, NormalizationKind::Robust);
    for (std::size_t r = 0; r < 25; ++r)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(back.rows(r, c), normalized.rows(r, c));
}
