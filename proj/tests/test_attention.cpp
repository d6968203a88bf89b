#include <gtest/gtest.h>

#include <cmath>
#include <optional>

#include "relpos/attention.hpp"
#include "relpos/checks.hpp"
#include "relpos/errors.hpp"
#include "relpos/posembed.hpp"
#include "test_util.hpp"

using namespace relpos;
using relpos::testing::op_grad_error;
using relpos::testing::random_tensor;

namespace {

PositionMethod method_with(MethodKind kind, std::optional<int> k) {
    PositionMethod m;
    m.kind = kind;
    m.clip_k = k;
    return m;
}

const std::vector<MethodKind> kRelative{MethodKind::shaw,    MethodKind::xlnet,   MethodKind::method1,
                                        MethodKind::method2, MethodKind::method3, MethodKind::method4};

// Position state for one head: table (if any) or xlnet extras.
struct Positions {
    PositionMethod method;
    std::optional<RelTable> table;
    std::optional<XlnetParams> xl;
    std::size_t d;

    Positions(PositionMethod m, std::size_t n, std::size_t d_z, SeededRng* rng) : method(m), d(d_z) {
        if (layout_for(m.kind) != TableLayout::none) {
            table.emplace(m, 1, 1, n, d_z);
            if (rng)
                for (auto& v : table->weights(0, 0).value.data()) v = rng->normal();
        }
        if (m.kind == MethodKind::xlnet) {
            xl = XlnetParams{Parameter("w_r", Tensor::zeros({d_z, d_z})), Parameter("u", Tensor::zeros({d_z})),
                             Parameter("v", Tensor::zeros({d_z}))};
            if (rng) {
                xl->w_r.value = random_tensor({d_z, d_z}, *rng);
                xl->u.value = random_tensor({d_z}, *rng);
                xl->v.value = random_tensor({d_z}, *rng);
            }
        }
    }

    Tensor logits(const Tensor& q, const Tensor& k, std::size_t L) {
        Tape tape;
        std::optional<RelIndex> index;
        std::optional<Tensor> sin;
        HeadContext ctx;
        ctx.method = &method;
        if (table) {
            index = RelIndex::build(*table, L);
            ctx.table = &table->weights(0, 0);
            ctx.index = &*index;
        }
        if (xl) {
            sin = sinusoid_table(-static_cast<std::int64_t>(L) + 1, 2 * L - 1, d);
            ctx.xlnet = &*xl;
            ctx.sinusoid = &*sin;
        }
        return method_logits(tape, tape.constant(q), tape.constant(k), L, ctx).value();
    }
};

Tensor vanilla(const Tensor& q, const Tensor& k, std::size_t L) {
    Tape tape;
    return logits_vanilla(tape.constant(q), tape.constant(k), L).value();
}

TEST(Vanilla, SingleToken) {
    auto q = Tensor::matrix({{1, 2, 3, 4}});
    auto k = Tensor::matrix({{0.5, -1, 2, 0}});
    auto e = vanilla(q, k, 1);
    ASSERT_EQ(e.shape(), (Shape{1, 1}));
    EXPECT_DOUBLE_EQ(e[0], (0.5 - 2 + 6) / 2.0);
}

TEST(Vanilla, IdentityRows) {
    auto e = vanilla(Tensor::identity(2), Tensor::identity(2), 2);
    const double s = 1.0 / std::sqrt(2.0);
    EXPECT_DOUBLE_EQ(e.at(0, 0), s);
    EXPECT_DOUBLE_EQ(e.at(1, 1), s);
    EXPECT_EQ(e.at(0, 1), 0.0);
    EXPECT_EQ(e.at(1, 0), 0.0);
}

TEST(Vanilla, Bilinear) {
    SeededRng rng(2);
    auto q = random_tensor({6, 3}, rng);
    auto k = random_tensor({6, 3}, rng);
    auto e = vanilla(q, k, 3);
    auto e2 = vanilla(scale(q, 2.0), k, 3);
    EXPECT_EQ(max_abs_diff(scale(e, 2.0), e2), 0.0);
}

TEST(Vanilla, StackedBlocksAreIndependent) {
    SeededRng rng(3);
    auto q = random_tensor({4, 2}, rng);
    auto k = random_tensor({4, 2}, rng);
    auto e = vanilla(q, k, 2);
    ASSERT_EQ(e.shape(), (Shape{4, 2}));
    EXPECT_DOUBLE_EQ(e.at(3, 0), dot(q.row(3), k.row(2)) / std::sqrt(2.0));
}

TEST(Shaw, HandExpansion) {
    const double c = 1.75;
    Positions p(method_with(MethodKind::shaw, 1), 2, 3, nullptr);
    p.table->weights(0, 0).value.fill(0.0);
    for (std::size_t r = 0; r < 3; ++r) p.table->weights(0, 0).value.at(r, 0) = c;
    auto q = Tensor::matrix({{1, 0, 0}, {1, 0, 0}});
    auto e = p.logits(q, Tensor::zeros({2, 3}), 2);
    for (double v : e.data()) EXPECT_DOUBLE_EQ(v, c / std::sqrt(3.0));
}

TEST(Xlnet, BiasOnlyLogitsByHand) {
    constexpr std::size_t L = 3, d = 2;
    SeededRng rng(5);
    Positions p(method_with(MethodKind::xlnet, std::nullopt), 8, d, &rng);
    auto k = random_tensor({L, d}, rng);
    auto e = p.logits(Tensor::zeros({L, d}), k, L);
    const auto& W = p.xl->w_r.value;
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
            const double off = static_cast<double>(j) - static_cast<double>(i);
            const double r[2] = {std::sin(off), std::cos(off)};
            double expect = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                expect += p.xl->u.value[c] * k.at(j, c);
                expect += p.xl->v.value[c] * (r[0] * W.at(0, c) + r[1] * W.at(1, c));
            }
            EXPECT_NEAR(e.at(i, j), expect / std::sqrt(2.0), 1e-14);
        }
}

TEST(Xlnet, LocationOnlyIsConstantAlongDiagonals) {
    constexpr std::size_t L = 6, d = 4;
    SeededRng rng(6);
    Positions p(method_with(MethodKind::xlnet, std::nullopt), 8, d, &rng);
    p.xl->u.value.fill(0.0);
    p.xl->v.value.fill(0.0);
    auto qrow = random_tensor({1, d}, rng);
    Tensor q({L, d});
    for (std::size_t i = 0; i < L; ++i) std::copy_n(qrow.data().begin(), d, q.row(i).begin());
    auto e = p.logits(q, Tensor::zeros({L, d}), L);
    for (std::size_t i = 1; i < L; ++i)
        for (std::size_t j = 1; j < L; ++j) EXPECT_NEAR(e.at(i, j), e.at(i - 1, j - 1), 1e-15);
}

TEST(Method12, ZeroScalarsGiveUniformAttention) {
    SeededRng rng(7);
    Positions p(method_with(MethodKind::method2, std::nullopt), 5, 3, nullptr);
    p.table->weights(0, 0).value.fill(0.0);
    auto e = p.logits(random_tensor({5, 3}, rng), random_tensor({5, 3}, rng), 5);
    for (double v : e.data()) EXPECT_EQ(v, 0.0);
    const auto w = softmax_rows(e);
    for (double v : w.data()) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(Method12, Method1SymmetricWhenContentIs) {
    constexpr std::size_t L = 5, d = 3;
    SeededRng rng(8);
    Positions p(method_with(MethodKind::method1, std::nullopt), L, d, &rng);
    auto q = random_tensor({L, d}, rng);
    auto e = p.logits(q, q, L);  // q_i . k_j == q_j . k_i
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) EXPECT_EQ(e.at(i, j), e.at(j, i));
}

TEST(Method12, ScalarMultipliesContent) {
    constexpr std::size_t L = 4, d = 2;
    SeededRng rng(9);
    Positions p(method_with(MethodKind::method2, std::nullopt), L, d, &rng);
    auto q = random_tensor({L, d}, rng);
    auto k = random_tensor({L, d}, rng);
    auto e = p.logits(q, k, L);
    auto v = vanilla(q, k, L);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j)
            EXPECT_NEAR(e.at(i, j), v.at(i, j) * p.table->resolve(0, 0, i, j)[0], 1e-15);
}

TEST(Method3, SumProd3Example) {
    Positions p(method_with(MethodKind::method3, 1), 2, 2, nullptr);
    auto& w = p.table->weights(0, 0).value;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        w.at(r, 0) = 5;
        w.at(r, 1) = 6;
    }
    auto e = p.logits(Tensor::matrix({{1, 2}}), Tensor::matrix({{3, 4}}), 1);
    EXPECT_DOUBLE_EQ(e[0], 63.0 / std::sqrt(2.0));
}

TEST(Method3, ZeroVectorGatesDistance) {
    constexpr std::size_t L = 6, d = 3;
    SeededRng rng(10);
    Positions p(method_with(MethodKind::method3, std::nullopt), L, d, &rng);
    const std::int64_t D = 2;
    for (auto off : {D, -D}) {
        auto row = p.table->weights(0, 0).value.row(p.table->row_for_offset(off));
        std::fill(row.begin(), row.end(), 0.0);
    }
    auto e = p.logits(random_tensor({L, d}, rng), random_tensor({L, d}, rng), L);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
            const auto dist = std::abs(static_cast<std::int64_t>(j) - static_cast<std::int64_t>(i));
            if (dist == D) EXPECT_EQ(e.at(i, j), 0.0);
            else EXPECT_NE(e.at(i, j), 0.0);
        }
}

TEST(Method4, ZeroContentGivesZeroLogits) {
    SeededRng rng(11);
    Positions p(method_with(MethodKind::method4, 2), 5, 3, &rng);
    auto e = p.logits(Tensor::zeros({5, 3}), Tensor::zeros({5, 3}), 5);
    for (double v : e.data()) EXPECT_EQ(v, 0.0);
}

TEST(Method4, AllEqualVectorsGiveThreeDots) {
    const std::vector<double> v{0.5, -1.5, 2.0};
    Positions p(method_with(MethodKind::method4, 1), 2, 3, nullptr);
    for (std::size_t r = 0; r < p.table->rows(); ++r) std::copy(v.begin(), v.end(), p.table->weights(0, 0).value.row(r).begin());
    const auto q = Tensor::matrix({{0.5, -1.5, 2.0}});
    const double expect = 3.0 * dot(v, v) / std::sqrt(3.0);
    Tape tape;
    RelIndex index = RelIndex::build(*p.table, 1);
    Var a = tape.param(p.table->weights(0, 0));
    Var qv = tape.constant(q);
    const Tensor direct = logits_m4(qv, qv, a, index).value();
    const Tensor rewritten = logits_m4_alt(qv, qv, a, index).value();
    EXPECT_DOUBLE_EQ(direct[0], expect);
    EXPECT_DOUBLE_EQ(rewritten[0], expect);
}

TEST(Method4, RewrittenFormMatches) { EXPECT_LT(m4_forms_max_diff(100, 3), 1e-10); }

TEST(Method4, RewrittenFormZeroTableIsVanilla) {
    SeededRng rng(12);
    Positions p(method_with(MethodKind::method4, 2), 5, 3, nullptr);
    auto q = random_tensor({5, 3}, rng);
    auto k = random_tensor({5, 3}, rng);
    Tape tape;
    RelIndex index = RelIndex::build(*p.table, 5);
    const Tensor alt = logits_m4_alt(tape.constant(q), tape.constant(k), tape.param(p.table->weights(0, 0)), index).value();
    EXPECT_LT(max_abs_diff(alt, vanilla(q, k, 5)), 1e-14);
}

TEST(Method4, AbsoluteIsSpecialCase) {
    // Per-position vectors b in the two slots with the <a,a> bias kept as b_i.b_j
    // reproduce plain attention on (q + b, k + b).
    constexpr std::size_t L = 5, d = 4;
    SeededRng rng(13);
    auto q = random_tensor({L, d}, rng);
    auto k = random_tensor({L, d}, rng);
    auto b = random_tensor({L, d}, rng);
    auto shifted = vanilla(add(q, b), add(k, b), L);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
            const double e = (dot(q.row(i), k.row(j)) + dot(q.row(i), b.row(j)) + dot(k.row(j), b.row(i)) +
                              dot(b.row(i), b.row(j))) /
                             std::sqrt(static_cast<double>(d));
            EXPECT_NEAR(e, shifted.at(i, j), 1e-12);
        }
}

TEST(IdentityInit, EveryRelativeMethodStartsAsVanilla) {
    for (const auto& c : identity_init_checks(4)) EXPECT_EQ(c.max_abs_diff, 0.0) << method_kind_name(c.kind);
    SeededRng rng(14);
    auto q = random_tensor({6, 4}, rng);
    auto k = random_tensor({6, 4}, rng);
    for (auto kind : kRelative) {
        Positions p(default_method(kind, 8), 8, 4, nullptr);
        EXPECT_EQ(max_abs_diff(p.logits(q, k, 3), vanilla(q, k, 3)), 0.0) << method_kind_name(kind);
    }
}

TEST(ShiftInvariance, RelativeLogitsIgnoreAbsolutePosition) {
    constexpr std::size_t L = 5, d = 4, n = 16;
    SeededRng rng(15);
    for (auto kind : kRelative) {
        Positions p(default_method(kind, n), n, d, &rng);
        auto q = random_tensor({L, d}, rng);
        auto k = random_tensor({L, d}, rng);
        const auto base = p.logits(q, k, L);
        for (std::size_t s : {1u, 3u, 7u}) {
            // same content after s padding rows of unrelated content
            auto qs = random_tensor({L + s, d}, rng);
            auto ks = random_tensor({L + s, d}, rng);
            for (std::size_t i = 0; i < L; ++i) {
                std::copy_n(q.row(i).begin(), d, qs.row(i + s).begin());
                std::copy_n(k.row(i).begin(), d, ks.row(i + s).begin());
            }
            const auto moved = p.logits(qs, ks, L + s);
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t j = 0; j < L; ++j)
                    EXPECT_NEAR(moved.at(i + s, j + s), base.at(i, j), 1e-12) << method_kind_name(kind);
        }
    }
}

TEST(Clipping, DistancesBeyondKShareLogits) {
    constexpr std::size_t L = 8, d = 3;
    SeededRng rng(16);
    for (auto kind : {MethodKind::shaw, MethodKind::method2, MethodKind::method3, MethodKind::method4}) {
        Positions p(method_with(kind, 2), 10, d, &rng);
        auto qrow = random_tensor({1, d}, rng);
        auto krow = random_tensor({1, d}, rng);
        Tensor q({L, d}), k({L, d});
        for (std::size_t i = 0; i < L; ++i) {
            std::copy_n(qrow.data().begin(), d, q.row(i).begin());
            std::copy_n(krow.data().begin(), d, k.row(i).begin());
        }
        const auto e = p.logits(q, k, L);
        const double fwd = e.at(0, 2), back = e.at(2, 0);
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j) {
                if (j >= i + 2) { EXPECT_EQ(e.at(i, j), fwd) << method_kind_name(kind); }
                if (i >= j + 2) { EXPECT_EQ(e.at(i, j), back) << method_kind_name(kind); }
            }
        EXPECT_NE(e.at(0, 1), fwd);
    }
}

class LogitGradcheck : public ::testing::TestWithParam<std::tuple<MethodKind, std::uint64_t>> {};

TEST_P(LogitGradcheck, MatchesFiniteDifferences) {
    const auto [kind, seed] = GetParam();
    for (const auto& r : logit_gradcheck(kind, seed)) EXPECT_LT(r.max_rel_error, kGradTolerance) << r.name;
}

INSTANTIATE_TEST_SUITE_P(AllMethods, LogitGradcheck,
                         ::testing::Combine(::testing::ValuesIn(kRelative), ::testing::Values(1u, 2u, 3u)),
                         [](const auto& info) {
                             return std::string(method_kind_name(std::get<0>(info.param))) + "_seed" +
                                    std::to_string(std::get<1>(info.param));
                         });

TEST(LogitGradcheck, VanillaAndRewrittenForm) {
    SeededRng rng(17);
    Parameter q("q", random_tensor({6, 3}, rng));
    Parameter k("k", random_tensor({6, 3}, rng));
    EXPECT_LT(op_grad_error({&q, &k}, [&](Tape& t) { return logits_vanilla(t.param(q), t.param(k), 3); }),
              kGradTolerance);
    RelTable table(method_with(MethodKind::method4, 1), 1, 1, 3, 3);
    for (auto& v : table.weights(0, 0).value.data()) v = rng.normal();
    const RelIndex index = RelIndex::build(table, 3);
    EXPECT_LT(op_grad_error({&q, &k, &table.weights(0, 0)},
                            [&](Tape& t) {
                                return logits_m4_alt(t.param(q), t.param(k), t.param(table.weights(0, 0)), index);
                            }),
              kGradTolerance);
}

TEST(MaskKeys, MaskedKeysGetZeroWeight) {
    SeededRng rng(18);
    Parameter e("e", random_tensor({4, 2}, rng));
    const std::vector<std::uint8_t> valid{1, 0, 1, 1};
    Tape t;
    auto w = ops::softmax_rows(mask_keys(t.param(e), valid, 2)).value();
    EXPECT_EQ(w.at(0, 1), 0.0);
    EXPECT_EQ(w.at(1, 1), 0.0);
    EXPECT_EQ(w.at(0, 0), 1.0);
    EXPECT_LT(op_grad_error({&e}, [&](Tape& tp) { return ops::softmax_rows(mask_keys(tp.param(e), valid, 2)); }),
              kGradTolerance);
}

struct HeadFixture {
    HeadParams head;
    explicit HeadFixture(SeededRng& rng, std::size_t dx, std::size_t dz)
        : head{Parameter("w_q", random_tensor({dx, dz}, rng)), Parameter("w_k", random_tensor({dx, dz}, rng)),
               Parameter("w_v", random_tensor({dx, dz}, rng))} {}
};

TEST(AttentionForward, SingleTokenReturnsValue) {
    SeededRng rng(19);
    HeadFixture f(rng, 4, 2);
    auto x = random_tensor({1, 4}, rng);
    PositionMethod m = default_method(MethodKind::sinusoid, 8);
    HeadContext ctx;
    ctx.method = &m;
    ctx.max_len = 8;
    Tape t;
    auto out = attention_forward(t, t.constant(x), f.head, 1, ctx);
    EXPECT_LT(max_abs_diff(out.z.value(), matmul(x, f.head.w_v.value)), 1e-15);
}

TEST(AttentionForward, UniformLogitsAverageValues) {
    SeededRng rng(20);
    HeadFixture f(rng, 4, 2);
    f.head.w_q.value.fill(0.0);
    auto x = random_tensor({3, 4}, rng);
    PositionMethod m = default_method(MethodKind::sinusoid, 8);
    HeadContext ctx;
    ctx.method = &m;
    ctx.max_len = 8;
    Tape t;
    auto out = attention_forward(t, t.constant(x), f.head, 3, ctx);
    const auto v = matmul(x, f.head.w_v.value);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 2; ++c)
            EXPECT_NEAR(out.z.value().at(i, c), (v.at(0, c) + v.at(1, c) + v.at(2, c)) / 3.0, 1e-14);
}

TEST(AttentionForward, RowsAreStochasticForEveryMethod) {
    constexpr std::size_t L = 6, dx = 4, dz = 4, n = 8;
    SeededRng rng(21);
    for (auto kind : all_method_kinds()) {
        HeadFixture f(rng, dx, dz);
        Positions p(default_method(kind, n), n, dz, &rng);
        std::optional<RelIndex> index;
        std::optional<Tensor> sin;
        HeadContext ctx;
        ctx.method = &p.method;
        ctx.max_len = n;
        if (p.table) {
            index = RelIndex::build(*p.table, L);
            ctx.table = &p.table->weights(0, 0);
            ctx.index = &*index;
        }
        if (p.xl) {
            sin = sinusoid_table(-static_cast<std::int64_t>(L) + 1, 2 * L - 1, dz);
            ctx.xlnet = &*p.xl;
            ctx.sinusoid = &*sin;
        }
        Tape t;
        auto out = attention_forward(t, t.constant(random_tensor({2 * L, dx}, rng)), f.head, L, ctx);
        const Tensor& w = out.weights.value();
        for (std::size_t r = 0; r < w.rows(); ++r) {
            double s = 0.0;
            for (double v : w.row(r)) {
                EXPECT_GE(v, 0.0);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-12) << method_kind_name(kind);
        }
    }
}

TEST(AttentionForward, AbsoluteBeyondCapacityThrows) {
    SeededRng rng(22);
    HeadFixture f(rng, 4, 2);
    PositionMethod m = default_method(MethodKind::absolute, 4);
    HeadContext ctx;
    ctx.method = &m;
    ctx.max_len = 4;
    Tape t;
    EXPECT_THROW(attention_forward(t, t.constant(random_tensor({5, 4}, rng)), f.head, 5, ctx), CapacityError);
}

TEST(AttentionForward, MissingTableIsUsageError) {
    PositionMethod m = default_method(MethodKind::method4, 4);
    HeadContext ctx;
    ctx.method = &m;
    Tape t;
    Var q = t.constant(Tensor::zeros({2, 2}));
    EXPECT_THROW(method_logits(t, q, q, 2, ctx), UsageError);
}

}  // namespace
