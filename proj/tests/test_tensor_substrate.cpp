#include <gtest/gtest.h>

#include <filesystem>

#include "s2i/core/checkpoint.hpp"
#include "s2i/nn/adam.hpp"
#include "s2i/nn/layers.hpp"
#include "support/testing.hpp"

using namespace s2i;
using namespace s2i::testing;

namespace {

Tensor vec(std::vector<double> v, Shape s, DType dt = DType::F64)
{
    return Tensor::from_vector(v, std::move(s), dt);
}

} // namespace

TEST(Broadcast, RowPlusColumn)
{
    Tensor a = vec({1, 2, 3}, {3, 1});
    Tensor b = vec({10, 20}, {1, 2});
    Tensor c = a + b;
    ASSERT_EQ(c.shape(), (Shape{3, 2}));
    EXPECT_EQ(c.to_vector(), (std::vector<double>{11, 21, 12, 22, 13, 23}));
}

TEST(Broadcast, IncompatibleShapesThrow)
{
    EXPECT_THROW(vec({1, 2, 3}, {3}) + vec({1, 2}, {2}), DimensionError);
}

TEST(Broadcast, SumToIsAdjointOfBroadcast)
{
    Rng rng(1);
    Tensor x = rng.normal_tensor({1, 3, 1, 2}, 1.0, DType::F64);
    Tensor g = rng.normal_tensor({4, 3, 5, 2}, 1.0, DType::F64);
    // <broadcast(x), g> == <x, sum_to(g)>
    double lhs = sum(broadcast_to(x, g.shape()) * g).item();
    double rhs = sum(x * sum_to(g, x.shape())).item();
    EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Dense, IdentityWeight)
{
    Tensor W = vec({1, 0, 0, 0, 1, 0, 0, 0, 1}, {3, 3});
    Tensor y = dense(vec({1, 2, 3}, {1, 3}), W, Tensor::zeros({3}, DType::F64));
    EXPECT_EQ(y.to_vector(), (std::vector<double>{1, 2, 3}));
}

TEST(Dense, ZeroWeightGivesBias)
{
    Tensor y = dense(vec({4, -1, 7}, {3}), Tensor::zeros({1, 3}, DType::F64), vec({5}, {1}));
    EXPECT_EQ(y.to_vector(), (std::vector<double>{5}));
}

TEST(Dense, MatchesNaiveMatmul)
{
    Rng rng(2);
    Tensor W = rng.normal_tensor({4, 3}, 1.0, DType::F64);
    Tensor b = rng.normal_tensor({4}, 1.0, DType::F64);
    Tensor x = rng.normal_tensor({5, 3}, 1.0, DType::F64);
    Tensor y = dense(x, W, b);
    std::vector<double> wt(12);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j)
            wt[j * 4 + i] = W.at(i * 3 + j);
    auto ref = naive_matmul(x.to_vector(), wt, 5, 3, 4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j)
            EXPECT_NEAR(y.at(i * 4 + j), ref[i * 4 + j] + b.at(j), 1e-6);
}

TEST(Dense, ShapeMismatchNamesBothShapes)
{
    try {
        dense(Tensor::zeros({2, 5}), Tensor::zeros({4, 3}), Tensor());
        FAIL();
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("[2,5]"), std::string::npos);
        EXPECT_NE(msg.find("[4,3]"), std::string::npos);
    }
}

TEST(Conv2d, IdentityKernel)
{
    Rng rng(3);
    Tensor x = rng.normal_tensor({1, 1, 4, 5}, 1.0, DType::F64);
    Tensor y = conv2d(x, Tensor::ones({1, 1, 1, 1}, DType::F64), Tensor(), 1, 0);
    EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(Conv2d, ZeroKernel)
{
    Rng rng(4);
    Tensor x = rng.normal_tensor({1, 2, 5, 5}, 1.0, DType::F64);
    Tensor y = conv2d(x, Tensor::zeros({3, 2, 3, 3}, DType::F64), Tensor::zeros({3}, DType::F64), 1, 1);
    for (double v : y.to_vector())
        EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, MatchesNestedLoopOracle)
{
    Rng rng(5);
    Tensor x = rng.normal_tensor({1, 2, 5, 5}, 1.0, DType::F64);
    Tensor w = rng.normal_tensor({2, 2, 3, 3}, 1.0, DType::F64);
    Tensor b = rng.normal_tensor({2}, 1.0, DType::F64);
    Tensor y = conv2d(x, w, b, 1, 1);
    int64_t OH, OW;
    auto ref = naive_conv2d(x.to_vector(), w.to_vector(), b.to_vector(), 2, 5, 5, 2, 3, 3, 1, 1, 1, 1, OH, OW);
    ASSERT_EQ(y.shape(), (Shape{1, 2, OH, OW}));
    for (int64_t i = 0; i < y.numel(); ++i)
        EXPECT_NEAR(y.at(i), ref[i], 1e-6);
}

TEST(Conv2d, BatchedAndStridedPathsMatchOracle)
{
    Rng rng(6);
    struct Case {
        int64_t N, C, H, O, k, s, p;
    };
    // Small spatial maps take the multi-sample GEMM path; large ones go per sample.
    for (Case c : {Case{7, 3, 8, 4, 4, 2, 1}, Case{5, 2, 4, 3, 3, 1, 1}, Case{2, 3, 40, 2, 3, 1, 1},
                   Case{9, 4, 6, 5, 1, 1, 0}, Case{3, 2, 4, 2, 4, 1, 0}}) {
        Tensor x = rng.normal_tensor({c.N, c.C, c.H, c.H}, 1.0, DType::F64);
        Tensor w = rng.normal_tensor({c.O, c.C, c.k, c.k}, 1.0, DType::F64);
        Tensor y = conv2d(x, w, Tensor(), c.s, c.p);
        const int64_t img = c.C * c.H * c.H;
        const std::vector<double> xall = x.to_vector();
        for (int64_t n = 0; n < c.N; ++n) {
            std::vector<double> xn(xall.begin() + n * img, xall.begin() + (n + 1) * img);
            int64_t OH, OW;
            auto ref = naive_conv2d(xn, w.to_vector(), {}, c.C, c.H, c.H, c.O, c.k, c.k, c.s, c.s, c.p, c.p, OH, OW);
            for (int64_t i = 0; i < static_cast<int64_t>(ref.size()); ++i)
                ASSERT_NEAR(y.at(n * ref.size() + i), ref[i], 1e-9);
        }
    }
}

TEST(Conv2d, NonIntegralOutputIsConfigError)
{
    EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 5, 5}), Tensor::zeros({1, 1, 4, 4}), Tensor(), 2, 1), ConfigError);
    EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), Tensor(), 1, 0), ConfigError);
}

TEST(Conv1d, IdentityTap)
{
    Rng rng(7);
    Tensor x = rng.normal_tensor({1, 1, 9}, 1.0, DType::F64);
    EXPECT_EQ(max_abs_diff(conv1d(x, Tensor::ones({1, 1, 1}, DType::F64), Tensor(), 1, 0), x), 0.0);
}

TEST(Conv1d, StrideTwoHalvesLength)
{
    Tensor y = conv1d(Tensor::zeros({1, 4, 16}), Tensor::zeros({2, 4, 6}), Tensor(), 2, 2);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 8}));
}

TEST(Conv1d, MatchesNestedLoopOracle)
{
    Rng rng(8);
    const int64_t C = 3, T = 12, O = 2, k = 6;
    Tensor x = rng.normal_tensor({1, C, T}, 1.0, DType::F64);
    Tensor w = rng.normal_tensor({O, C, k}, 1.0, DType::F64);
    Tensor b = rng.normal_tensor({O}, 1.0, DType::F64);
    Tensor y = conv1d(x, w, b, 2, 2);
    const int64_t OT = (T + 4 - k) / 2 + 1;
    ASSERT_EQ(y.shape(), (Shape{1, O, OT}));
    for (int64_t o = 0; o < O; ++o)
        for (int64_t t = 0; t < OT; ++t) {
            double acc = b.at(o);
            for (int64_t c = 0; c < C; ++c)
                for (int64_t j = 0; j < k; ++j) {
                    int64_t src = t * 2 - 2 + j;
                    if (src >= 0 && src < T)
                        acc += w.at((o * C + c) * k + j) * x.at(c * T + src);
                }
            EXPECT_NEAR(y.at(o * OT + t), acc, 1e-6);
        }
}

TEST(BatchNorm, NormalisedInputIsFixedPoint)
{
    // Two samples per channel at +-1: mean 0, biased variance 1.
    Tensor x = vec({1, -1, 2, -2, -1, 1, -2, 2}, {2, 2, 2, 1});
    nn::BatchNorm bn(2);
    bn.to(DType::F64);
    Tensor y = bn.forward(x);
    // Channel 1 has variance 4, so only channel 0 is a fixed point.
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 2; ++i)
            EXPECT_NEAR(y.at(n * 4 + i), x.at(n * 4 + i), 1e-5);
}

TEST(BatchNorm, ZeroGammaGivesBeta)
{
    Rng rng(9);
    nn::BatchNorm bn(3);
    bn.to(DType::F64);
    bn.gamma.copy_from(Tensor::zeros({3}));
    bn.beta.copy_from(vec({1, 2, 3}, {3}));
    Tensor y = bn.forward(rng.normal_tensor({4, 3, 2, 2}, 1.0, DType::F64));
    for (int64_t i = 0; i < y.numel(); ++i)
        EXPECT_EQ(y.at(i), static_cast<double>((i / 4) % 3 + 1));
}

TEST(BatchNorm, TrainModeStatistics)
{
    Rng rng(10);
    Tensor x = rng.normal_tensor({6, 4, 3, 3}, 3.0, DType::F64) + 2.0;
    Tensor g = Tensor::ones({4}, DType::F64), b = Tensor::zeros({4}, DType::F64);
    Tensor rm = Tensor::zeros({4}, DType::F64), rv = Tensor::ones({4}, DType::F64);
    Tensor y = batch_norm(x, g, b, rm, rv, true, 0.1, 1e-5);
    for (int c = 0; c < 4; ++c) {
        double s = 0, q = 0;
        int cnt = 0;
        for (int n = 0; n < 6; ++n)
            for (int i = 0; i < 9; ++i) {
                double v = y.at((n * 4 + c) * 9 + i);
                s += v;
                q += v * v;
                ++cnt;
            }
        EXPECT_LT(std::abs(s / cnt), 1e-5);
        EXPECT_NEAR(q / cnt, 1.0, 1e-4);
    }
}

TEST(BatchNorm, RunningStatsOnlyMoveInTraining)
{
    Rng rng(11);
    nn::BatchNorm bn(2);
    Tensor x = rng.normal_tensor({4, 2, 2, 2}) + 3.0;
    bn.eval();
    bn.forward(x);
    EXPECT_EQ(bn.running_mean.to_vector(), (std::vector<double>{0, 0}));
    bn.train();
    bn.forward(x);
    EXPECT_GT(bn.running_mean.at(0), 0.1);
}

TEST(BatchNorm, DegenerateBatchRejected)
{
    nn::BatchNorm bn(2);
    EXPECT_THROW(bn.forward(Tensor::zeros({1, 2, 1, 1})), DegenerateBatchError);
    bn.eval();
    EXPECT_NO_THROW(bn.forward(Tensor::zeros({1, 2, 1, 1})));
}

TEST(Activation, Values)
{
    EXPECT_EQ(relu(vec({-1, 0, 2}, {3})).to_vector(), (std::vector<double>{0, 0, 2}));
    EXPECT_EQ(sigmoid(vec({0}, {1})).item(), 0.5);
    EXPECT_DOUBLE_EQ(activation(vec({-1}, {1}), Activation::LeakyReLU, 0.2).item(), -0.2);
    double x = 0.7, k = std::sqrt(2.0 / 3.14159265358979323846);
    EXPECT_NEAR(gelu(vec({x}, {1})).item(), 0.5 * x * (1 + std::tanh(k * (x + 0.044715 * x * x * x))), 1e-15);
}

TEST(Softmax, SymmetricAndStable)
{
    auto p = softmax(vec({3, 3}, {2}), 0).to_vector();
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    auto q = softmax(vec({0, 1000}, {2}), 0).to_vector();
    EXPECT_TRUE(std::isfinite(q[0]) && std::isfinite(q[1]));
    EXPECT_NEAR(q[1], 1.0, 1e-12);
}

TEST(Softmax, RowsSumToOneProperty)
{
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        int64_t a = rng.randint(1, 5), b = rng.randint(1, 9), c = rng.randint(1, 4);
        Tensor x = rng.normal_tensor({a, b, c}, rng.uniform(0.1, 50.0), DType::F32);
        int64_t axis = rng.randint(0, 3);
        Tensor s = sum(softmax(x, axis), axis);
        for (double v : s.to_vector())
            ASSERT_NEAR(v, 1.0, 1e-6);
    }
}

TEST(Pooling, GlobalAveragePool)
{
    EXPECT_EQ(global_avg_pool(Tensor::full({1, 2, 3, 3}, 4.5, DType::F64)).to_vector(),
              (std::vector<double>{4.5, 4.5}));
    Rng rng(13);
    Tensor x = rng.normal_tensor({1, 3, 1, 1}, 1.0, DType::F64);
    EXPECT_EQ(global_avg_pool(x).to_vector(), x.to_vector());
    Tensor r = rng.normal_tensor({1, 3, 4, 4}, 1.0, DType::F64);
    Tensor g = global_avg_pool(r);
    for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int i = 0; i < 16; ++i)
            s += r.at(c * 16 + i);
        EXPECT_NEAR(g.at(c), s / 16, 1e-6);
    }
}

TEST(Pooling, UpsampleNearest)
{
    Rng rng(14);
    Tensor x = rng.normal_tensor({1, 2, 3, 3}, 1.0, DType::F64);
    EXPECT_EQ(max_abs_diff(upsample_nearest(x, 1), x), 0.0);
    EXPECT_EQ(upsample_nearest(Tensor::full({1, 1, 1, 1}, 3.0), 2).to_vector(), (std::vector<double>{3, 3, 3, 3}));
    EXPECT_NEAR(sum(upsample_nearest(x, 3)).item(), 9 * sum(x).item(), 1e-9);
}

namespace {

// Scalar-expanded GRU step with gates (r, z, n), one sample.
std::vector<double> gru_oracle(const nn::GRU& g, const std::vector<std::vector<double>>& xs, bool reverse)
{
    const int64_t H = g.hidden(), F = static_cast<int64_t>(xs[0].size()), T = static_cast<int64_t>(xs.size());
    auto Wi = g.w_ih.to_vector(), Wh = g.w_hh.to_vector(), bi = g.b_ih.to_vector(), bh = g.b_hh.to_vector();
    std::vector<double> h(H, 0.0), out(T * H);
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (int64_t k = 0; k < T; ++k) {
        int64_t t = reverse ? T - 1 - k : k;
        std::vector<double> hn(H);
        for (int64_t j = 0; j < H; ++j) {
            double a[3], c[3];
            for (int gate = 0; gate < 3; ++gate) {
                int64_t row = gate * H + j;
                a[gate] = bi[row];
                for (int64_t f = 0; f < F; ++f)
                    a[gate] += Wi[row * F + f] * xs[t][f];
                c[gate] = bh[row];
                for (int64_t q = 0; q < H; ++q)
                    c[gate] += Wh[row * H + q] * h[q];
            }
            double r = sig(a[0] + c[0]);
            double z = sig(a[1] + c[1]);
            double n = std::tanh(a[2] + r * c[2]);
            hn[j] = (1 - z) * n + z * h[j];
        }
        h = hn;
        for (int64_t j = 0; j < H; ++j)
            out[t * H + j] = h[j];
    }
    return out;
}

} // namespace

TEST(GRU, SingleStepDirectionsAgreeWithSharedParams)
{
    Rng rng(15);
    nn::BiGRU bi(3, 4, rng);
    bi.to(DType::F64);
    bi.bwd->w_ih.copy_from(bi.fwd->w_ih);
    bi.bwd->w_hh.copy_from(bi.fwd->w_hh);
    bi.bwd->b_ih.copy_from(bi.fwd->b_ih);
    bi.bwd->b_hh.copy_from(bi.fwd->b_hh);
    Tensor y = bi.forward(rng.normal_tensor({2, 1, 3}, 1.0, DType::F64));
    for (int n = 0; n < 2; ++n)
        for (int j = 0; j < 4; ++j)
            EXPECT_EQ(y.at(n * 8 + j), y.at(n * 8 + 4 + j));
}

TEST(GRU, ZeroInputZeroBiasStaysZero)
{
    Rng rng(16);
    nn::BiGRU bi(3, 5, rng);
    for (auto& [n, p] : bi.named_parameters())
        if (n.find("b_") != std::string::npos)
            p.copy_from(Tensor::zeros(p.shape()));
    Tensor y = bi.forward(Tensor::zeros({2, 6, 3}));
    for (double v : y.to_vector())
        EXPECT_EQ(v, 0.0);
}

TEST(GRU, MatchesPerGateRecurrence)
{
    Rng rng(17);
    nn::BiGRU bi(3, 4, rng);
    bi.to(DType::F64);
    Tensor x = rng.normal_tensor({1, 3, 3}, 1.0, DType::F64);
    std::vector<std::vector<double>> xs(3, std::vector<double>(3));
    for (int t = 0; t < 3; ++t)
        for (int f = 0; f < 3; ++f)
            xs[t][f] = x.at(t * 3 + f);
    auto fo = gru_oracle(*bi.fwd, xs, false), bo = gru_oracle(*bi.bwd, xs, true);
    Tensor y = bi.forward(x);
    for (int t = 0; t < 3; ++t)
        for (int j = 0; j < 4; ++j) {
            EXPECT_NEAR(y.at(t * 8 + j), fo[t * 4 + j], 1e-5);
            EXPECT_NEAR(y.at(t * 8 + 4 + j), bo[t * 4 + j], 1e-5);
        }
}

TEST(Backward, SumGivesOnes)
{
    Tensor x = leaf(vec({1, 2, 3}, {3}));
    backward(sum(x));
    EXPECT_EQ(x.grad().to_vector(), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, SquareAndAccumulate)
{
    Tensor x = leaf(vec({1, 2}, {2}));
    backward(sum(x * x));
    EXPECT_EQ(x.grad().to_vector(), (std::vector<double>{2, 4}));
    backward(sum(x * x));
    EXPECT_EQ(x.grad().to_vector(), (std::vector<double>{4, 8}));
    x.zero_grad();
    EXPECT_FALSE(x.grad().defined());
}

TEST(Backward, NonScalarLossRejected)
{
    Tensor x = leaf(vec({1, 2}, {2}));
    EXPECT_THROW(backward(x * 2.0), ContractError);
}

TEST(Backward, AllReachableLeavesPopulated)
{
    Rng rng(18);
    nn::Linear l1(4, 3, rng), l2(3, 2, rng);
    Tensor x = leaf(rng.normal_tensor({5, 4}));
    backward(sum(l2.forward(tanh(l1.forward(x)))));
    for (auto* m : {&l1, &l2})
        for (auto& [n, p] : m->named_parameters()) {
            ASSERT_TRUE(p.grad().defined()) << n;
            EXPECT_EQ(p.grad().shape(), p.shape());
        }
    EXPECT_TRUE(x.grad().defined());
}

TEST(GradCheck, ElementwiseAndReductionOps)
{
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        Shape s{rng.randint(1, 4), rng.randint(1, 5)};
        Tensor a = leaf(away_from_zero(rng, s, 0.2)), b = leaf(away_from_zero(rng, s, 0.2));
        Tensor pos = leaf(rng.uniform_tensor(s, 0.5, 2.0, DType::F64));
        Tensor row = leaf(rng.normal_tensor({s[1]}, 1.0, DType::F64));
        auto r = gradcheck(
            [&] {
                Tensor y = a * b + a / pos - row + exp(a) * 0.1 + log(pos) + sqrt(pos) + pow_scalar(pos, 1.5);
                y = y + tanh(b) + sigmoid(a) + gelu(b) + relu(a) + leaky_relu(b, 0.2) + clamp_min(a, 0.0);
                return concat({reshape(softmax(y, 1), {-1}), reshape(log_softmax(y, 0), {-1}), mean(y, 0),
                               sum(y, 1)},
                              0);
            },
            {a, b, pos, row});
        EXPECT_LT(r.max_rel_err, 1e-3) << r.worst;
    }
}

TEST(GradCheck, LayerKinds)
{
    Rng rng(20);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t N = rng.randint(2, 4), C = rng.randint(1, 4), H = 2 * rng.randint(2, 4), O = rng.randint(1, 4);
        const int64_t k = rng.randint(1, 4), s = rng.randint(1, 3);
        const int64_t p = k / 2;
        if ((H + 2 * p - k) % s != 0)
            continue;
        nn::Conv2d conv(C, O, k, s, p, rng);
        nn::Linear lin(C, O, rng);
        nn::BatchNorm bn(C);
        for (nn::Module* m : std::initializer_list<nn::Module*>{&conv, &lin, &bn})
            m->to(DType::F64);
        bn.gamma.copy_from(rng.uniform_tensor({C}, 0.5, 1.5));
        bn.beta.copy_from(rng.normal_tensor({C}));
        Tensor x = leaf(rng.normal_tensor({N, C, H, H}, 1.0, DType::F64));
        std::vector<Tensor> ins{x};
        for (nn::Module* m : std::initializer_list<nn::Module*>{&conv, &lin, &bn})
            for (auto& t : m->parameters())
                ins.push_back(t);
        auto r = gradcheck(
            [&] {
                Tensor c = conv.forward(x);
                Tensor d = lin.forward(global_avg_pool(x));
                Tensor b = bn.forward(x);
                return concat({flatten_rows(c), d, flatten_rows(upsample_nearest(avg_pool2d(b, 2), 2))}, 1);
            },
            ins);
        EXPECT_LT(r.max_rel_err, 1e-3) << "trial " << trial << ": " << r.worst;
    }
}

TEST(GradCheck, RecurrentAndAttention)
{
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t N = rng.randint(1, 3), T = rng.randint(1, 5), F = rng.randint(1, 4), H = rng.randint(1, 4);
        nn::BiGRU gru(F, H, rng);
        nn::AttentionPool pool(2 * H, 3, rng);
        nn::Conv1d c1(F, F, 3, 1, 1, rng);
        gru.to(DType::F64);
        pool.to(DType::F64);
        c1.to(DType::F64);
        Tensor x = leaf(rng.normal_tensor({N, T, F}, 1.0, DType::F64));
        std::vector<Tensor> ins{x};
        for (nn::Module* m : std::initializer_list<nn::Module*>{&gru, &pool, &c1})
            for (auto& t : m->parameters())
                ins.push_back(t);
        auto r = gradcheck(
            [&] {
                Tensor h = gru.forward(x);
                Tensor c = c1.forward(reshape(transpose(reshape(x, {N * T, F})), {1, F, N * T}));
                return concat({pool.forward(h), reshape(c, {N, -1})}, 1);
            },
            ins);
        EXPECT_LT(r.max_rel_err, 1e-3) << "trial " << trial << ": " << r.worst;
    }
}

TEST(SecondOrder, GradientNormPenaltyMatchesFiniteDifference)
{
    // d/dw of ||d/dx f(x; w)||^2 through conv, leaky relu, pooling and dense.
    Rng rng(22);
    nn::Conv2d conv(2, 3, 4, 2, 1, rng);
    nn::Conv2d conv2(3, 2, 1, 1, 0, rng);
    nn::Linear head(2, 1, rng);
    for (nn::Module* m : std::initializer_list<nn::Module*>{&conv, &conv2, &head})
        m->to(DType::F64);
    Tensor x = leaf(rng.normal_tensor({2, 2, 4, 4}, 1.0, DType::F64));
    std::vector<Tensor> ws;
    for (nn::Module* m : std::initializer_list<nn::Module*>{&conv, &conv2, &head})
        for (auto& t : m->parameters())
            ws.push_back(t);
    auto penalty = [&] {
        Tensor h = leaky_relu(conv.forward(x), 0.2);
        h = conv2.forward(upsample_nearest(h, 2)) + avg_pool2d(x, 1);
        Tensor score = head.forward(global_avg_pool(avg_pool2d(h, 2)));
        Tensor gx = grad({score}, {x}, true)[0];
        return sum(gx * gx);
    };
    auto r = gradcheck(penalty, ws, 1e-5);
    EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
}

TEST(SecondOrder, UntapedBackwardRaises)
{
    Tensor x = leaf(vec({0.3, -0.2}, {2}));
    Tensor g = grad({sum(tanh(x))}, {x}, false)[0];
    EXPECT_EQ(g.shape(), x.shape());
    EXPECT_THROW(grad({sum(tanh(x))}, {x}, true), UnsupportedOpError);
}

TEST(Adam, ZeroGradientLeavesParams)
{
    Tensor p = leaf(vec({1, -2, 3}, {3}, DType::F32));
    nn::Adam opt({{"p", p}}, {1e-2, 0.0, 0.9, 1e-8});
    p.set_grad(Tensor::zeros({3}));
    opt.step();
    EXPECT_EQ(p.to_vector(), (std::vector<double>{1, -2, 3}));
}

TEST(Adam, FirstStepMovesBySignTimesLr)
{
    Tensor p = leaf(vec({0, 0}, {2}));
    nn::Adam opt({{"p", p}}, {0.01, 0.0, 0.9, 1e-8});
    p.set_grad(vec({3.0, -0.5}, {2}));
    opt.step();
    EXPECT_NEAR(p.at(0), -0.01, 1e-9);
    EXPECT_NEAR(p.at(1), 0.01, 1e-9);
}

TEST(Adam, FiveStepScalarTrajectory)
{
    const double lr = 0.05, b1 = 0.5, b2 = 0.9, eps = 1e-8;
    Tensor p = leaf(vec({1.5}, {1}));
    nn::Adam opt({{"p", p}}, {lr, b1, b2, eps});
    double x = 1.5, m = 0, v = 0;
    for (int t = 1; t <= 5; ++t) {
        double g = 2 * x - 1;
        p.set_grad(vec({2 * p.at(0) - 1}, {1}));
        opt.step();
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
        EXPECT_NEAR(p.at(0), x, 1e-7);
    }
}

TEST(Checkpoint, RoundTripIsBitExact)
{
    Rng rng(23);
    nn::NamedTensors recs{{"a", rng.normal_tensor({3, 4})},
                          {"b", rng.normal_tensor({2}, 1.0, DType::F64)},
                          {"scalar", Tensor::scalar(7.0, DType::F64)}};
    auto path = std::filesystem::temp_directory_path() / "s2i_ckpt_roundtrip.bin";
    save_checkpoint(path, "unit", recs);
    Checkpoint ck = load_checkpoint(path);
    EXPECT_EQ(ck.module, "unit");
    ASSERT_EQ(ck.records.size(), recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(ck.records[i].first, recs[i].first);
        EXPECT_EQ(ck.records[i].second.dtype(), recs[i].second.dtype());
        EXPECT_EQ(ck.records[i].second.shape(), recs[i].second.shape());
        EXPECT_EQ(ck.records[i].second.to_vector(), recs[i].second.to_vector());
    }
    std::filesystem::remove(path);
}

TEST(Checkpoint, MismatchReportsEveryDifference)
{
    Rng rng(24);
    nn::Linear a(3, 2, rng), b(4, 2, rng, false);
    auto path = std::filesystem::temp_directory_path() / "s2i_ckpt_mismatch.bin";
    save_module(path, "linear", a);
    try {
        load_module(path, "linear", b);
        FAIL();
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("shape: weight"), std::string::npos) << msg;
        EXPECT_NE(msg.find("unexpected: bias"), std::string::npos) << msg;
    }
    std::filesystem::remove(path);
}

TEST(Determinism, SameSeedSameOutputs)
{
    auto run = [] {
        Rng rng(99);
        nn::Conv2d c(3, 4, 3, 1, 1, rng);
        Tensor x = rng.normal_tensor({2, 3, 8, 8});
        return c.forward(x).to_vector();
    };
    EXPECT_EQ(run(), run());
}

// A node must not keep its own output alive, or every taped graph leaks.
TEST(Tape, OutputsAreReleasedWithTheGraph)
{
    Rng rng(4);
    const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> ops = {
        {"exp", [](const Tensor& x) { return exp(x); }},
        {"sqrt", [](const Tensor& x) { return sqrt(x * x + 1.0); }},
        {"tanh", [](const Tensor& x) { return tanh(x); }},
        {"sigmoid", [](const Tensor& x) { return sigmoid(x); }},
        {"softmax", [](const Tensor& x) { return softmax(x, 1); }},
        {"log_softmax", [](const Tensor& x) { return log_softmax(x, 1); }},
        {"row_norm", [](const Tensor& x) { return row_norm(x); }},
        {"batch_norm", [](const Tensor& x) {
             nn::BatchNorm bn(4);
             return bn.forward(x);
         }},
    };
    for (const auto& [name, op] : ops) {
        std::weak_ptr<TensorImpl> alive;
        {
            Tensor x = rng.normal_tensor({3, 4}).requires_grad_(true);
            Tensor y = op(x);
            ASSERT_TRUE(y.requires_grad()) << name;
            alive = y.impl_ptr();
            backward(sum(y));
        }
        EXPECT_TRUE(alive.expired()) << name;
    }
}
