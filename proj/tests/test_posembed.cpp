#include <gtest/gtest.h>

#include <cmath>

#include "relpos/errors.hpp"
#include "relpos/posembed.hpp"
#include "relpos/rng.hpp"

using namespace relpos;

namespace {

PositionMethod method_with(MethodKind kind, std::optional<int> k) {
    PositionMethod m;
    m.kind = kind;
    m.clip_k = k;
    return m;
}

bool same_entry(std::span<const double> a, std::span<const double> b) {
    return a.data() == b.data() && a.size() == b.size();
}

TEST(Clip, Examples) {
    EXPECT_EQ(clip(5, 3), 3);
    EXPECT_EQ(clip(-7, 2), -2);
    for (std::int64_t k : {1, 2, 32}) EXPECT_EQ(clip(0, k), 0);
    EXPECT_EQ(clip(-1, 2), -1);
}

TEST(Sinusoid, Examples) {
    const auto z = sinusoid_encoding(0, 4);
    EXPECT_EQ(z, (std::vector<double>{0, 1, 0, 1}));
    const auto one = sinusoid_encoding(1, 2);
    EXPECT_EQ(one[0], std::sin(1.0));
    EXPECT_EQ(one[1], std::cos(1.0));
    EXPECT_NEAR(one[0], 0.8415, 1e-4);
    EXPECT_NEAR(one[1], 0.5403, 1e-4);
    EXPECT_EQ(sinusoid_encoding(10000, 2)[0], std::sin(10000.0));
}

TEST(Sinusoid, HigherFrequenciesFollowTheExponent) {
    // d = 4: second pair uses 10000^(2/4) = 100
    const auto v = sinusoid_encoding(7, 4);
    EXPECT_NEAR(v[2], std::sin(7.0 / 100.0), 1e-15);
    EXPECT_NEAR(v[3], std::cos(7.0 / 100.0), 1e-15);
}

TEST(Sinusoid, NegativePositionsAreDirect) {
    const auto pos = sinusoid_encoding(3, 6);
    const auto neg = sinusoid_encoding(-3, 6);
    for (std::size_t i = 0; i < 6; i += 2) {
        EXPECT_EQ(neg[i], -pos[i]);
        EXPECT_EQ(neg[i + 1], pos[i + 1]);
    }
}

TEST(Sinusoid, PairsOnUnitCircle) {
    for (std::int64_t pos = -40; pos <= 600; pos += 7) {
        const auto v = sinusoid_encoding(pos, 16);
        for (std::size_t i = 0; i < 16; i += 2) EXPECT_NEAR(v[i] * v[i] + v[i + 1] * v[i + 1], 1.0, 1e-12);
    }
}

TEST(Sinusoid, TableRowsMatchEncoding) {
    const auto t = sinusoid_table(-2, 5, 4);
    for (std::size_t r = 0; r < 5; ++r) {
        const auto v = sinusoid_encoding(static_cast<std::int64_t>(r) - 2, 4);
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(t.at(r, c), v[c]);
    }
}

TEST(Sinusoid, OddDimensionThrows) { EXPECT_THROW(sinusoid_encoding(1, 3), ConfigError); }

TEST(Method, ParseNames) {
    EXPECT_EQ(parse_method_kind("method4"), MethodKind::method4);
    EXPECT_EQ(parse_method_kind("m2"), MethodKind::method2);
    EXPECT_EQ(parse_method_kind("xlnet"), MethodKind::xlnet);
    EXPECT_THROW(parse_method_kind("rotary"), ConfigError);
    for (auto k : all_method_kinds()) EXPECT_EQ(parse_method_kind(method_kind_name(k)), k);
}

TEST(Method, Defaults) {
    const auto m4 = default_method(MethodKind::method4, 512);
    EXPECT_EQ(m4.clip_k, 32);
    EXPECT_FALSE(m4.saturate);
    EXPECT_EQ(default_method(MethodKind::shaw, 10).clip_k, 9);
    EXPECT_FALSE(default_method(MethodKind::method1, 64).clip_k);
    EXPECT_TRUE(default_method(MethodKind::method1, 64).saturate);
    EXPECT_FALSE(default_method(MethodKind::xlnet, 64).clip_k);
}

TEST(Method, ValidationErrors) {
    EXPECT_THROW(method_with(MethodKind::method1, 2).validate(8), ConfigError);
    EXPECT_THROW(method_with(MethodKind::xlnet, 2).validate(8), ConfigError);
    EXPECT_THROW(method_with(MethodKind::method4, 0).validate(8), ConfigError);
    EXPECT_THROW(method_with(MethodKind::method4, 8).validate(8), ConfigError);
    EXPECT_NO_THROW(method_with(MethodKind::method4, 7).validate(8));
    PositionMethod bias = method_with(MethodKind::shaw, std::nullopt);
    bias.xlnet_bias_enabled = true;
    EXPECT_THROW(bias.validate(8), ConfigError);
}

TEST(RelTable, LayoutsAndShapes) {
    RelTable m1(method_with(MethodKind::method1, std::nullopt), 2, 3, 8, 4);
    EXPECT_EQ(m1.layout(), TableLayout::scalar_unsigned);
    EXPECT_EQ(m1.rows(), 8u);
    EXPECT_EQ(m1.width(), 1u);
    RelTable m2(method_with(MethodKind::method2, 3), 2, 3, 8, 4);
    EXPECT_EQ(m2.layout(), TableLayout::scalar_signed);
    EXPECT_EQ(m2.rows(), 15u);
    for (auto kind : {MethodKind::shaw, MethodKind::method3, MethodKind::method4}) {
        RelTable t(method_with(kind, 3), 2, 3, 8, 4);
        EXPECT_EQ(t.layout(), TableLayout::vector_signed);
        EXPECT_EQ(t.rows(), 15u);
        EXPECT_EQ(t.width(), 4u);
        EXPECT_EQ(t.parameters().size(), 6u);
    }
    EXPECT_THROW(RelTable(method_with(MethodKind::xlnet, std::nullopt), 1, 1, 8, 4), ConfigError);
}

TEST(RelTable, SignedIndexOrigin) {
    RelTable t(method_with(MethodKind::method2, std::nullopt), 1, 1, 6, 1);
    EXPECT_EQ(t.row_for_offset(-5), 0u);
    EXPECT_EQ(t.row_for_offset(0), 5u);
    EXPECT_EQ(t.row_for_offset(5), 10u);
    EXPECT_EQ(t.row_index(2, 2), 5u);
}

TEST(RelTable, IdentityInitValues) {
    for (auto kind : {MethodKind::method1, MethodKind::method2, MethodKind::method3}) {
        RelTable t(method_with(kind, kind == MethodKind::method1 ? std::nullopt : std::optional<int>(3)), 1, 2, 6, 4);
        for (auto* p : t.parameters())
            for (double v : p->value.data()) EXPECT_EQ(v, 1.0);
    }
    for (auto kind : {MethodKind::shaw, MethodKind::method4}) {
        RelTable t(method_with(kind, 3), 1, 2, 6, 4);
        for (auto* p : t.parameters())
            for (double v : p->value.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(RelTable, Method1IgnoresSign) {
    RelTable t(method_with(MethodKind::method1, std::nullopt), 1, 1, 10, 1);
    EXPECT_TRUE(same_entry(t.resolve(0, 0, 3, 7), t.resolve(0, 0, 7, 3)));
    EXPECT_EQ(t.row_index(3, 7), 4u);
}

TEST(RelTable, ShawClippingSharesEntry) {
    RelTable t(method_with(MethodKind::shaw, 2), 1, 1, 8, 3);
    EXPECT_TRUE(same_entry(t.resolve(0, 0, 0, 5), t.resolve(0, 0, 0, 2)));
    EXPECT_FALSE(same_entry(t.resolve(0, 0, 0, 1), t.resolve(0, 0, 0, 2)));
    EXPECT_TRUE(same_entry(t.resolve(0, 0, 7, 0), t.resolve(0, 0, 2, 0)));
}

TEST(RelTable, Method2ZeroDistanceIsCentreRow) {
    RelTable t(method_with(MethodKind::method2, std::nullopt), 1, 1, 5, 1);
    auto& w = t.weights(0, 0).value;
    for (std::size_t r = 0; r < t.rows(); ++r) w.at(r, 0) = static_cast<double>(r);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(t.resolve(0, 0, i, i)[0], 4.0);
}

TEST(RelTable, ResolveDependsOnlyOnOffset) {
    for (auto kind : {MethodKind::shaw, MethodKind::method1, MethodKind::method2, MethodKind::method3,
                      MethodKind::method4}) {
        for (std::optional<int> k : {std::optional<int>(), std::optional<int>(1), std::optional<int>(3)}) {
            if (k && !accepts_clip(kind)) continue;
            RelTable t(method_with(kind, k), 1, 1, 12, 2);
            for (std::size_t i = 0; i < 6; ++i)
                for (std::size_t j = 0; j < 6; ++j)
                    for (std::size_t s = 0; s < 6; ++s)
                        EXPECT_TRUE(same_entry(t.resolve(0, 0, i, j), t.resolve(0, 0, i + s, j + s)));
        }
    }
}

TEST(RelTable, BeyondClipUsesBoundaryEntry) {
    for (int k = 1; k <= 5; ++k) {
        RelTable t(method_with(MethodKind::method4, k), 1, 1, 12, 2);
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t j = 0; j < 12; ++j) {
                const auto off = static_cast<std::int64_t>(j) - static_cast<std::int64_t>(i);
                if (std::abs(off) < k) continue;
                EXPECT_EQ(t.row_index(i, j), t.row_for_offset(off > 0 ? k : -k));
            }
    }
}

TEST(RelTable, UnclippedBeyondExtentIsCapacityError) {
    RelTable t(method_with(MethodKind::method2, std::nullopt), 1, 1, 4, 1);
    EXPECT_THROW(t.row_for_offset(4), CapacityError);
    EXPECT_THROW(t.row_for_offset(-4), CapacityError);
    PositionMethod m1 = method_with(MethodKind::method1, std::nullopt);
    EXPECT_THROW(RelTable(m1, 1, 1, 4, 1).row_for_offset(9), CapacityError);
}

TEST(RelTable, SaturationClampsToOutermostEntry) {
    PositionMethod m1 = default_method(MethodKind::method1, 4);
    RelTable t(m1, 1, 1, 4, 1);
    EXPECT_EQ(t.row_for_offset(9), 3u);
    EXPECT_EQ(t.row_for_offset(-9), 3u);
    PositionMethod m2 = method_with(MethodKind::method2, std::nullopt);
    m2.saturate = true;
    RelTable t2(m2, 1, 1, 4, 1);
    EXPECT_EQ(t2.row_for_offset(9), 6u);
    EXPECT_EQ(t2.row_for_offset(-9), 0u);
}

TEST(RelTable, ExportWeights) {
    RelTable t(method_with(MethodKind::method4, 3), 1, 2, 6, 2);
    auto& w = t.weights(0, 1).value;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        w.at(r, 0) = static_cast<double>(r);
        w.at(r, 1) = -static_cast<double>(r);
    }
    const auto e = t.export_weights(0, 1, -2, 1);
    ASSERT_EQ(e.shape(), (Shape{4, 2}));
    EXPECT_EQ(e.at(0, 0), 3.0);  // offset -2 -> row 3
    EXPECT_EQ(e.at(2, 0), 5.0);  // offset 0 -> row n-1
    EXPECT_EQ(e.at(3, 1), -6.0);
    EXPECT_THROW(t.export_weights(0, 1, -6, 0), BoundsError);
    EXPECT_THROW(t.export_weights(0, 1, 0, 6), BoundsError);
    EXPECT_THROW(t.export_weights(0, 1, 2, 1), BoundsError);
}

TEST(RelTable, EmbeddingWeightsCsv) {
    const auto csv = embedding_weights_csv(Tensor::matrix({{0.5, -1}, {2, 0}}), -1);
    EXPECT_EQ(csv, "rel_pos,dim_0,dim_1\n-1,0.5,-1\n0,2,0\n");
}

TEST(ParamCount, BertBaseValues) {
    EXPECT_EQ(param_count(default_method(MethodKind::method2, 512), 12, 12, 512, 64), 147312u);
    EXPECT_EQ(param_count(default_method(MethodKind::method1, 512), 12, 12, 512, 64), 73728u);
    EXPECT_EQ(param_count(default_method(MethodKind::sinusoid, 512), 12, 12, 512, 64), 0u);
    for (auto kind : {MethodKind::shaw, MethodKind::method3, MethodKind::method4})
        EXPECT_EQ(param_count(default_method(kind, 512), 12, 12, 512, 64), 12u * 12u * 1023u * 64u);
    EXPECT_EQ(param_count(default_method(MethodKind::absolute, 512), 12, 12, 512, 768), 512u * 768u);
    EXPECT_EQ(param_count(default_method(MethodKind::xlnet, 512), 12, 12, 512, 64), 12u * 12u * 64u * 64u);
    PositionMethod xb = default_method(MethodKind::xlnet, 512);
    xb.xlnet_bias_enabled = true;
    EXPECT_EQ(param_count(xb, 12, 12, 512, 64), 12u * 12u * 64u * 64u + 2u * 12u * 12u * 64u);
}

TEST(ParamCount, Formulas) {
    EXPECT_EQ(param_count_formula(default_method(MethodKind::method1, 8)), "mhn");
    EXPECT_EQ(param_count_formula(default_method(MethodKind::method2, 8)), "mh(2n-1)");
    EXPECT_EQ(param_count_formula(default_method(MethodKind::method4, 8)), "mh(2n-1)d");
    EXPECT_EQ(param_count_formula(default_method(MethodKind::sinusoid, 8)), "0");
    EXPECT_EQ(param_count_formula(default_method(MethodKind::absolute, 8)), "nd");
}

TEST(ParamCount, MatchesConstructedTables) {
    SeededRng rng(21);
    for (int trial = 0; trial < 25; ++trial) {
        const auto m = static_cast<std::size_t>(rng.range(1, 4));
        const auto h = static_cast<std::size_t>(rng.range(1, 4));
        const auto n = static_cast<std::size_t>(rng.range(2, 40));
        const auto d = static_cast<std::size_t>(rng.range(1, 9));
        for (auto kind : {MethodKind::shaw, MethodKind::method1, MethodKind::method2, MethodKind::method3,
                          MethodKind::method4}) {
            const auto method = default_method(kind, n);
            EXPECT_EQ(RelTable(method, m, h, n, d).element_count(), param_count(method, m, h, n, d));
        }
        AbsTable abs(n, d, rng, 1.0);
        EXPECT_EQ(abs.weights().value.numel(), param_count(default_method(MethodKind::absolute, n), m, h, n, d));
    }
}

}  // namespace
