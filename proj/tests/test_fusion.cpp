#include <gtest/gtest.h>

#include "support/fusion_oracle.hpp"

using namespace s2i;
using namespace s2i::testing;
using namespace s2i::fusion;

namespace {

struct Dims {
    int64_t N, C, H, W, D;
};

Dims random_dims(Rng& rng, int64_t ratio)
{
    return {rng.randint(1, 4), ratio * rng.randint(1, 4), rng.randint(1, 6), rng.randint(1, 6), rng.randint(1, 7)};
}

void zero(Tensor& t) { t.copy_from(Tensor::zeros(t.shape(), t.dtype())); }
void fill(Tensor& t, double v) { t.copy_from(Tensor::full(t.shape(), v, t.dtype())); }

Tensor map(Rng& rng, const Dims& d) { return rng.normal_tensor({d.N, d.C, d.H, d.W}, 1.0, DType::F64); }

} // namespace

TEST(Fusion, PixelAttentionMatchesOracle)
{
    Rng rng(100);
    for (int trial = 0; trial < 60; ++trial) {
        Dims d = random_dims(rng, 2);
        PixelAttention pam(d.C, 2, rng);
        pam.to(DType::F64);
        randomize_stats(pam, rng);
        pam.eval();
        Tensor f = map(rng, d);
        Tensor pa;
        Tensor out = pam.forward(f, &pa);
        for (int64_t n = 0; n < d.N; ++n) {
            Vec ref_pa;
            Vec ref = pam_ref(slice(f, n), pam, d.C, d.H, d.W, &ref_pa);
            ASSERT_LT(max_abs_diff(slice(out, n), ref), 1e-6) << "trial " << trial;
            ASSERT_LT(max_abs_diff(slice(pa, n), ref_pa), 1e-6);
        }
    }
}

TEST(Fusion, SpeechModulationMatchesOracle)
{
    Rng rng(101);
    for (int trial = 0; trial < 60; ++trial) {
        Dims d = random_dims(rng, 1);
        SpeechModulation smm(d.C, d.D, rng);
        smm.to(DType::F64);
        Tensor f = map(rng, d), s = rng.normal_tensor({d.N, d.D}, 1.0, DType::F64);
        Tensor out = smm.forward(f, s);
        for (int64_t n = 0; n < d.N; ++n)
            ASSERT_LT(max_abs_diff(slice(out, n), smm_ref(slice(f, n), slice(s, n), smm, d.C, d.H * d.W)), 1e-6);
    }
}

TEST(Fusion, WeightedFusionMatchesOracle)
{
    Rng rng(102);
    for (int trial = 0; trial < 60; ++trial) {
        Dims d = random_dims(rng, 2);
        WeightedFusion wfm(d.C, 2, rng);
        wfm.to(DType::F64);
        Tensor mp = map(rng, d), ms = map(rng, d);
        Tensor wf;
        Tensor out = wfm.forward(mp, ms, &wf);
        for (int64_t n = 0; n < d.N; ++n) {
            Vec ref_wf;
            Vec ref = wfm_ref(slice(mp, n), slice(ms, n), wfm, d.C, d.H * d.W, &ref_wf);
            ASSERT_LT(max_abs_diff(slice(out, n), ref), 1e-6);
            ASSERT_LT(max_abs_diff(slice(wf, n), ref_wf), 1e-6);
        }
    }
}

TEST(Fusion, VisualSpeechFusionMatchesOracle)
{
    Rng rng(103);
    for (int trial = 0; trial < 60; ++trial) {
        Dims d = random_dims(rng, 2);
        FusionConfig cfg;
        cfg.mode = static_cast<FusionMode>(trial % 3);
        cfg.pam_ratio = 2;
        cfg.wfm_ratio = 2;
        VisualSpeechFusion m(d.C, d.D, cfg, rng);
        m.to(DType::F64);
        randomize_stats(m, rng);
        m.eval();
        Tensor f = map(rng, d), s = rng.normal_tensor({d.N, d.D}, 1.0, DType::F64);
        Tensor out = m.forward(f, s);
        ASSERT_EQ(out.shape(), f.shape());
        for (int64_t n = 0; n < d.N; ++n)
            ASSERT_LT(max_abs_diff(slice(out, n), vsfm_ref(slice(f, n), slice(s, n), m, d.C, d.H, d.W)), 1e-6)
                << "trial " << trial << " mode " << fusion_mode_name(cfg.mode);
    }
}

TEST(Fusion, ZeroLogitAttentionHalvesInput)
{
    Rng rng(104);
    PixelAttention pam(8, 8, rng);
    zero(pam.f1->weight);
    zero(pam.f1->bias);
    Tensor f = rng.normal_tensor({2, 8, 3, 3});
    EXPECT_LT(max_abs_diff(pam.forward(f), 0.5 * f), 1e-7);
}

TEST(Fusion, AttentionAbsorbsZero)
{
    Rng rng(105);
    PixelAttention pam(8, 8, rng);
    Tensor f = Tensor::zeros({2, 8, 3, 3});
    EXPECT_EQ(max_abs_diff(pam.forward(f), f), 0.0);
}

TEST(Fusion, AttentionOutOfRangeRatioRejected)
{
    Rng rng(106);
    EXPECT_THROW(PixelAttention(12, 8, rng), ConfigError);
    EXPECT_THROW(WeightedFusion(6, 4, rng), ConfigError);
}

TEST(Fusion, IdentityModulation)
{
    Rng rng(107);
    SpeechModulation smm(3, 5, rng);
    zero(smm.mlp2->weight);
    fill(smm.mlp2->bias, 1.0);
    zero(smm.mlp4->weight);
    zero(smm.mlp4->bias);
    Tensor f = rng.normal_tensor({2, 3, 4, 4}), s = rng.normal_tensor({2, 5});
    EXPECT_LT(max_abs_diff(smm.forward(f, s), f), 1e-7);
}

TEST(Fusion, PureShiftModulation)
{
    Rng rng(108);
    SpeechModulation smm(3, 5, rng);
    zero(smm.mlp2->weight);
    zero(smm.mlp2->bias);
    Tensor f = rng.normal_tensor({2, 3, 4, 4}), s = rng.normal_tensor({2, 5});
    Tensor ba;
    Tensor out = smm.forward(f, s, nullptr, &ba);
    EXPECT_LT(max_abs_diff(out, broadcast_to(ba, f.shape())), 1e-7);
}

TEST(Fusion, ModulationDimensionMismatch)
{
    Rng rng(109);
    SpeechModulation smm(3, 5, rng);
    EXPECT_THROW(smm.forward(Tensor::zeros({2, 3, 2, 2}), Tensor::zeros({2, 4})), DimensionError);
    EXPECT_THROW(smm.forward(Tensor::zeros({2, 4, 2, 2}), Tensor::zeros({2, 5})), DimensionError);
}

TEST(Fusion, SymmetricWeightsAverage)
{
    Rng rng(110);
    WeightedFusion wfm(8, 4, rng);
    zero(wfm.expand->weight);
    zero(wfm.expand->bias);
    Tensor mp = rng.normal_tensor({2, 8, 3, 3}), ms = rng.normal_tensor({2, 8, 3, 3});
    EXPECT_LT(max_abs_diff(wfm.forward(mp, ms), 0.5 * (mp + ms)), 1e-7);
}

TEST(Fusion, EqualBranchesPassThrough)
{
    Rng rng(111);
    WeightedFusion wfm(8, 4, rng);
    wfm.to(DType::F64);
    Tensor mp = rng.normal_tensor({2, 8, 3, 3}, 1.0, DType::F64);
    EXPECT_LT(max_abs_diff(wfm.forward(mp, mp), mp), 1e-12);
}

TEST(Fusion, SaturatedWeightsSelectFirstBranch)
{
    Rng rng(112);
    const int64_t C = 8;
    WeightedFusion wfm(C, 4, rng);
    wfm.to(DType::F64);
    zero(wfm.expand->weight);
    std::vector<double> b(2 * C);
    for (int64_t c = 0; c < C; ++c) {
        b[2 * c] = 20.0;
        b[2 * c + 1] = -20.0;
    }
    wfm.expand->bias.copy_from(Tensor::from_vector(b, {2 * C}, DType::F64));
    Tensor mp = rng.normal_tensor({2, C, 3, 3}, 1.0, DType::F64), ms = rng.normal_tensor({2, C, 3, 3}, 1.0, DType::F64);
    EXPECT_LT(max_abs_diff(wfm.forward(mp, ms), mp), 1e-6);
}

TEST(Fusion, BranchShapeMismatch)
{
    Rng rng(113);
    WeightedFusion wfm(8, 4, rng);
    EXPECT_THROW(wfm.forward(Tensor::zeros({1, 8, 2, 2}), Tensor::zeros({1, 8, 2, 3})), DimensionError);
    EXPECT_THROW(fuse_variant(Tensor::zeros({1, 8, 2, 2}), Tensor::zeros({1, 8, 3, 2}), FusionMode::Add, nullptr),
                 DimensionError);
}

TEST(Fusion, VariantCases)
{
    Rng rng(114);
    WeightedFusion wfm(8, 4, rng);
    Tensor mp = rng.normal_tensor({2, 8, 3, 3}), ms = rng.normal_tensor({2, 8, 3, 3});
    EXPECT_EQ(max_abs_diff(fuse_variant(mp, Tensor::zeros(mp.shape()), FusionMode::Add, nullptr), mp), 0.0);
    EXPECT_EQ(max_abs_diff(fuse_variant(mp, Tensor::ones(mp.shape()), FusionMode::Mul, nullptr), mp), 0.0);
    EXPECT_EQ(max_abs_diff(fuse_variant(mp, ms, FusionMode::WFM, &wfm), wfm.forward(mp, ms)), 0.0);
    EXPECT_THROW(parse_fusion_mode("concat"), ConfigError);
    for (auto m : {FusionMode::WFM, FusionMode::Add, FusionMode::Mul})
        EXPECT_EQ(parse_fusion_mode(fusion_mode_name(m)), m);
}

TEST(Fusion, TrivialCompositionGivesScaledNormalizedInput)
{
    Rng rng(115);
    FusionConfig cfg;
    VisualSpeechFusion m(8, 6, cfg, rng);
    m.to(DType::F64);
    randomize_stats(m, rng);
    m.eval();
    zero(m.pam->f1->weight);
    zero(m.pam->f1->bias);
    for (auto* l : {m.smm->mlp2.get(), m.smm->mlp4.get()}) {
        zero(l->weight);
        zero(l->bias);
    }
    zero(m.wfm->expand->weight);
    zero(m.wfm->expand->bias);
    Tensor f = rng.normal_tensor({2, 8, 3, 3}, 1.0, DType::F64), s = rng.normal_tensor({2, 6}, 1.0, DType::F64);
    Tensor fp = m.bn->forward(f);
    EXPECT_LT(max_abs_diff(m.forward(f, s), 1.25 * fp), 1e-12);
}

TEST(Fusion, ZeroFixedPoint)
{
    Rng rng(116);
    FusionConfig cfg;
    VisualSpeechFusion m(8, 6, cfg, rng);
    for (auto& [name, p] : m.named_parameters())
        if (name.ends_with("bias") || name.ends_with("beta"))
            zero(p);
    Tensor f = Tensor::zeros({2, 8, 3, 3});
    m.eval();
    EXPECT_EQ(max_abs_diff(m.forward(f, Tensor::zeros({2, 6})), f), 0.0);
}

TEST(Fusion, ShapePreservedProperty)
{
    Rng rng(117);
    for (int trial = 0; trial < 30; ++trial) {
        FusionConfig cfg;
        cfg.pam_ratio = 1;
        cfg.wfm_ratio = 1;
        const int64_t C = rng.randint(1, 9), H = rng.randint(1, 9), W = rng.randint(1, 9);
        VisualSpeechFusion m(C, 4, cfg, rng);
        Tensor f = rng.normal_tensor({2, C, H, W});
        ASSERT_EQ(m.forward(f, rng.normal_tensor({2, 4})).shape(), f.shape());
    }
}

TEST(Fusion, WeightsNormalizeProperty)
{
    Rng rng(118);
    WeightedFusion wfm(16, 4, rng);
    for (int trial = 0; trial < 1000; ++trial) {
        const double scale = rng.uniform(0.01, 50.0);
        Tensor wf;
        wfm.forward(rng.normal_tensor({1, 16, 2, 2}, scale), rng.normal_tensor({1, 16, 2, 2}, scale), &wf);
        for (int64_t c = 0; c < 16; ++c) {
            const double a = wf.at(2 * c), b = wf.at(2 * c + 1);
            ASSERT_GE(a, 0.0);
            ASSERT_LE(a, 1.0);
            ASSERT_GE(b, 0.0);
            ASSERT_LE(b, 1.0);
            ASSERT_NEAR(a + b, 1.0, 1e-6);
        }
    }
}

TEST(Fusion, AttentionRangeAndContractionProperty)
{
    Rng rng(119);
    for (int trial = 0; trial < 100; ++trial) {
        PixelAttention pam(8, 8, rng);
        pam.to(DType::F64);
        Tensor f = rng.normal_tensor({2, 8, 3, 3}, rng.uniform(0.1, 3.0), DType::F64);
        Tensor pa;
        Tensor out = pam.forward(f, &pa);
        for (int64_t i = 0; i < pa.numel(); ++i) {
            ASSERT_GT(pa.at(i), 0.0);
            ASSERT_LT(pa.at(i), 1.0);
        }
        for (int64_t i = 0; i < f.numel(); ++i)
            ASSERT_LE(std::abs(out.at(i)), std::abs(f.at(i)));
    }
}

TEST(Fusion, BlendStaysBetweenBranchesProperty)
{
    Rng rng(120);
    WeightedFusion wfm(8, 4, rng);
    wfm.to(DType::F64);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor mp = rng.normal_tensor({2, 8, 2, 3}, 2.0, DType::F64), ms = rng.normal_tensor({2, 8, 2, 3}, 2.0, DType::F64);
        Tensor out = wfm.forward(mp, ms);
        for (int64_t i = 0; i < out.numel(); ++i) {
            ASSERT_GE(out.at(i), std::min(mp.at(i), ms.at(i)) - 1e-12);
            ASSERT_LE(out.at(i), std::max(mp.at(i), ms.at(i)) + 1e-12);
        }
    }
}

TEST(Fusion, SpeechChangesOutput)
{
    Rng rng(121);
    FusionConfig cfg;
    VisualSpeechFusion m(8, 6, cfg, rng);
    m.eval();
    Tensor f = rng.normal_tensor({2, 8, 4, 4});
    for (int trial = 0; trial < 20; ++trial)
        EXPECT_GT(max_abs_diff(m.forward(f, rng.normal_tensor({2, 6})), m.forward(f, rng.normal_tensor({2, 6}))), 0.0);
}

TEST(Fusion, GradCheckAllInputsAndParameters)
{
    Rng rng(122);
    FusionConfig cfg;
    cfg.pam_ratio = 2;
    cfg.wfm_ratio = 2;
    VisualSpeechFusion m(4, 5, cfg, rng);
    m.to(DType::F64);
    Tensor f = leaf(rng.normal_tensor({2, 4, 4, 4}, 1.0, DType::F64));
    Tensor s = leaf(rng.normal_tensor({2, 5}, 1.0, DType::F64));
    std::vector<Tensor> ins{f, s};
    for (auto& p : m.parameters())
        ins.push_back(p);
    auto r = gradcheck([&] { return m.forward(f, s); }, ins, 1e-6, 24);
    EXPECT_LT(r.max_rel_err, 1e-3) << r.worst;
}
