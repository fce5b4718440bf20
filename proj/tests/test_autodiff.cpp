#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "hrirdiff/autodiff.hpp"
#include "hrirdiff/rng.hpp"
#include "test_util.hpp"

using namespace hrirdiff;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Largest relative deviation between tape gradients and central differences over all inputs.
double gradient_error(std::vector<Mat<double>> inputs, const Builder& build, double h = 1e-6) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.parameter(m));
  const Var out = build(tape, vars);
  tape.backward(out);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Mat<double> analytic = tape.grad(vars[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        auto shifted = inputs;
        shifted[k](i) += delta;
        Tape<double> t;
        std::vector<Var> v;
        for (const auto& m : shifted) v.push_back(t.constant(m));
        return t.value(build(t, v))(0, 0);
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double a = analytic(i);
      worst = std::max(worst, std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric)));
    }
  }
  return worst;
}

Mat<double> randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian<double>(r, c, rng);
}

// Scalar head that depends nonlinearly on every output entry.
Var head(Tape<double>& t, Var y) {
  const auto& v = t.value(y);
  return ad::squared_error(t, y, randn(v.rows(), v.cols(), 99), 0.5);
}

Mat<double> naive_conv(const Mat<double>& x, const Mat<double>& w, const Mat<double>& b, const ad::ConvShape& s,
                       Eigen::Index cin) {
  const Eigen::Index cout = w.rows(), out_len = s.conv_out_len();
  Mat<double> y = Mat<double>::Zero(cout, s.batch * out_len);
  for (Eigen::Index item = 0; item < s.batch; ++item)
    for (Eigen::Index co = 0; co < cout; ++co)
      for (Eigen::Index t = 0; t < out_len; ++t) {
        double acc = b(co, 0);
        for (Eigen::Index ci = 0; ci < cin; ++ci)
          for (Eigen::Index j = 0; j < s.kernel; ++j) {
            const Eigen::Index pos = t * s.stride - s.pad + j;
            if (pos >= 0 && pos < s.in_len) acc += w(co, ci * s.kernel + j) * x(ci, item * s.in_len + pos);
          }
        y(co, item * out_len + t) = acc;
      }
  return y;
}

}  // namespace

TEST(Tape, ConstantLossHasZeroGradients) {
  Tape<double> t;
  const Var p = t.parameter(randn(3, 4, 1));
  const Var c = t.constant(Mat<double>::Ones(1, 1));
  const Var out = ad::add(t, c, ad::sum(t, t.constant(Mat<double>::Zero(1, 1))));
  t.backward(out);
  EXPECT_TRUE(t.grad(p).isZero());
}

TEST(Tape, SquaredNormGradientIsTwiceValue) {
  Tape<double> t;
  const Mat<double> w = randn(5, 3, 2);
  const Var p = t.parameter(w);
  t.backward(ad::squared_error(t, p, Mat<double>(Mat<double>::Zero(5, 3)), 1.0));
  EXPECT_TRUE(t.grad(p).isApprox(2.0 * w, 1e-14));
}

TEST(Ops, AddReluMatmulBias) {
  EXPECT_LT(gradient_error({randn(4, 3, 3), randn(3, 6, 4), randn(4, 1, 5)},
                           [](Tape<double>& t, const std::vector<Var>& v) {
                             return head(t, ad::relu(t, ad::add_row_bias(t, ad::matmul(t, v[0], v[1]), v[2])));
                           }),
            1e-6);
}

TEST(Ops, ItemBiasBroadcastConcat) {
  EXPECT_LT(gradient_error({randn(3, 2 * 5, 6), randn(3, 2, 7), randn(2, 2, 8)},
                           [](Tape<double>& t, const std::vector<Var>& v) {
                             const Var a = ad::add_item_bias(t, v[0], v[1], 5);
                             return head(t, ad::concat_rows(t, {a, ad::broadcast_items(t, v[2], 5)}));
                           }),
            1e-6);
}

TEST(Ops, EmbeddingAndRangeCheck) {
  EXPECT_LT(gradient_error({randn(4, 6, 9)},
                           [](Tape<double>& t, const std::vector<Var>& v) {
                             return head(t, ad::embedding(t, v[0], {2, 5, 2}));
                           }),
            1e-6);
  Tape<double> t;
  const Var table = t.parameter(randn(4, 6, 9));
  EXPECT_EQ(hrirdiff::testing::error_kind_of([&] { ad::embedding(t, table, {6}); }), ErrorKind::kContract);
}

TEST(Ops, ConvMatchesNaiveAndGradients) {
  const ad::ConvShape s{2, 12, 4, 2, 1};
  const Mat<double> x = randn(3, 24, 10), w = randn(5, 12, 11), b = randn(5, 1, 12);
  Tape<double> t;
  const Var y = ad::conv1d(t, t.constant(x), t.constant(w), t.constant(b), s);
  EXPECT_LT((t.value(y) - naive_conv(x, w, b, s, 3)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(gradient_error({x, w, b},
                           [s](Tape<double>& tp, const std::vector<Var>& v) {
                             return head(tp, ad::conv1d(tp, v[0], v[1], v[2], s));
                           }),
            1e-6);
  const ad::ConvShape same{2, 12, 3, 1, 1};
  EXPECT_LT(gradient_error({x, randn(4, 9, 13), randn(4, 1, 14)},
                           [same](Tape<double>& tp, const std::vector<Var>& v) {
                             return head(tp, ad::conv1d(tp, v[0], v[1], v[2], same));
                           }),
            1e-6);
}

TEST(Ops, TransposedConvIsAdjointOfConv) {
  const ad::ConvShape down{2, 12, 4, 2, 1};
  const ad::ConvShape up{2, 6, 4, 2, 1};
  const Mat<double> w = randn(5, 12, 20), x = randn(3, 24, 21), y = randn(5, 12, 22);
  Tape<double> t;
  const Var zero_b5 = t.constant(Mat<double>::Zero(5, 1));
  const Var zero_b3 = t.constant(Mat<double>::Zero(3, 1));
  const Mat<double> cx = t.value(ad::conv1d(t, t.constant(x), t.constant(w), zero_b5, down));
  const Mat<double> ty = t.value(ad::conv_transpose1d(t, t.constant(y), t.constant(w), zero_b3, up));
  ASSERT_EQ(ty.cols(), 24);
  EXPECT_NEAR((cx.array() * y.array()).sum(), (x.array() * ty.array()).sum(), 1e-10);
  EXPECT_LT(gradient_error({y, w, randn(3, 1, 23)},
                           [up](Tape<double>& tp, const std::vector<Var>& v) {
                             return head(tp, ad::conv_transpose1d(tp, v[0], v[1], v[2], up));
                           }),
            1e-6);
}

TEST(Ops, BatchNormTrainingAndEval) {
  const Mat<double> x = randn(3, 10, 30), g = randn(3, 1, 31), b = randn(3, 1, 32);
  EXPECT_LT(gradient_error({x, g, b},
                           [](Tape<double>& t, const std::vector<Var>& v) {
                             return head(t, ad::batch_norm(t, v[0], v[1], v[2], ad::BatchNormBuffers<double>{}, true));
                           }),
            1e-5);
  const Mat<double> rm = randn(3, 1, 33);
  const Mat<double> rv = randn(3, 1, 34).cwiseAbs().array() + 0.5;
  EXPECT_LT(gradient_error({x, g, b},
                           [&](Tape<double>& t, const std::vector<Var>& v) {
                             return head(t, ad::batch_norm(t, v[0], v[1], v[2], ad::BatchNormBuffers<double>{&rm, &rv}, false));
                           }),
            1e-6);
}

TEST(Ops, BatchNormRunningUpdateUnbiased) {
  const Mat<double> x = randn(2, 8, 35);
  Mat<double> rm = Mat<double>::Zero(2, 1), rv = Mat<double>::Ones(2, 1);
  Tape<double> t;
  ad::batch_norm(t, t.constant(x), t.constant(Mat<double>::Ones(2, 1)), t.constant(Mat<double>::Zero(2, 1)),
                 ad::BatchNormBuffers<double>{&rm, &rv, &rm, &rv}, true, 0.1);
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Eigen::VectorXd var = (x.colwise() - mean).array().square().rowwise().sum() / 7.0;
  EXPECT_TRUE(rm.col(0).isApprox(0.1 * mean, 1e-14));
  EXPECT_TRUE(rv.col(0).isApprox((0.9 + 0.1 * var.array()).matrix(), 1e-14));
}

TEST(Ops, AttentionGradients) {
  EXPECT_LT(gradient_error({randn(4, 2 * 6, 40), randn(4, 2 * 6, 41), randn(4, 2 * 6, 42)},
                           [](Tape<double>& t, const std::vector<Var>& v) {
                             return head(t, ad::attention(t, v[0], v[1], v[2], 2, 6));
                           }),
            1e-6);
}

TEST(Ops, AttentionPermutationEquivariant) {
  const Eigen::Index len = 7;
  const Mat<double> q = randn(4, len, 43), k = randn(4, len, 44), v = randn(4, len, 45);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(len);
  perm.setIdentity();
  Rng rng(46);
  std::vector<int> idx(len);
  for (int i = 0; i < len; ++i) idx[i] = i;
  shuffle(idx, rng);
  for (int i = 0; i < len; ++i) perm.indices()(i) = idx[i];
  Tape<double> t;
  const Mat<double> base = t.value(ad::attention(t, t.constant(q), t.constant(k), t.constant(v), 2, len));
  const Mat<double> permuted =
      t.value(ad::attention(t, t.constant(q * perm), t.constant(k * perm), t.constant(v * perm), 2, len));
  EXPECT_LT((permuted - base * perm).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ops, ResizeTime) {
  EXPECT_LT(gradient_error({randn(2, 3 * 5, 47)},
                           [](Tape<double>& t, const std::vector<Var>& v) {
                             return head(t, ad::resize_time(t, ad::resize_time(t, v[0], 5, 8), 8, 4));
                           }),
            1e-6);
}
