#include <cmath>
#include <random>

#include "doctest.h"
#include "mmtl/kernels.hpp"
#include "oracles.hpp"

using namespace mmtl;

TEST_CASE("depthwise conv matches hand examples") {
  Tensor x({1, 4}, {1, 2, 3, 4});
  Tensor k({1, 3}, {1, 1, 1});
  Tensor out = conv1d_depthwise(x, k, 1, 1);
  REQUIRE(out.shape == std::vector<int>{1, 4});
  CHECK(out(0, 0) == doctest::Approx(3));
  CHECK(out(0, 1) == doctest::Approx(6));
  CHECK(out(0, 2) == doctest::Approx(9));
  CHECK(out(0, 3) == doctest::Approx(7));

  Tensor strided = conv1d_depthwise(x, k, 2, 1);
  REQUIRE(strided.shape == std::vector<int>{1, 2});
  CHECK(strided(0, 0) == doctest::Approx(3));
  CHECK(strided(0, 1) == doctest::Approx(9));
}

TEST_CASE("depthwise delta kernel is the identity") {
  std::mt19937 rng(1);
  Tensor x = oracle::random_tensor({3, 9}, rng);
  Tensor k({3, 3});
  for (int c = 0; c < 3; ++c) k(c, 1) = 1.0f;
  Tensor out = conv1d_depthwise(x, k, 1, 1);
  REQUIRE(out.shape == x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("depthwise rejects bad shapes") {
  Tensor x({2, 4});
  CHECK_THROWS_AS(conv1d_depthwise(x, Tensor({3, 3}), 1, 1), ShapeError);
  CHECK_THROWS_AS(conv1d_depthwise(x, Tensor({2, 7}), 1, 1), ShapeError);  // K > padded length
}

TEST_CASE("pointwise conv matches hand examples") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  Tensor w({1, 2}, {1, 1});
  Tensor out = conv1d_pointwise(x, w);
  REQUIRE(out.shape == std::vector<int>{1, 2});
  CHECK(out(0, 0) == doctest::Approx(4));
  CHECK(out(0, 1) == doctest::Approx(6));

  // identity weights
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor same = conv1d_pointwise(x, eye);
  for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(same.data[i] == x.data[i]);

  // zero weights + bias -> constant bias
  Tensor zeros({3, 2});
  Tensor bias({3}, {5, -1, 2});
  Tensor c = conv1d_pointwise(x, zeros, &bias);
  for (int co = 0; co < 3; ++co)
    for (int t = 0; t < 2; ++t) CHECK(c(co, t) == doctest::Approx(bias(co)));

  CHECK_THROWS_AS(conv1d_pointwise(x, Tensor({1, 3})), ShapeError);
}

TEST_CASE("conv kernels match naive oracle on 200 random cases") {
  std::mt19937 rng(42);
  for (int it = 0; it < 200; ++it) {
    const int C = 1 + static_cast<int>(uniform01(rng) * 5);
    const int T = 4 + static_cast<int>(uniform01(rng) * 24);
    const int K = 1 + 2 * static_cast<int>(uniform01(rng) * 3);
    const int stride = 1 + static_cast<int>(uniform01(rng) * 2.999f);
    const int pad = static_cast<int>(uniform01(rng) * 3.999f);
    if (K > T + 2 * pad) continue;
    Tensor x = oracle::random_tensor({C, T}, rng, 2.0f);
    Tensor k = oracle::random_tensor({C, K}, rng, 2.0f);
    Tensor got = conv1d_depthwise(x, k, stride, pad);
    Tensor want = oracle::depthwise(x, k, stride, pad);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.data.size(); ++i)
      CHECK(std::fabs(got.data[i] - want.data[i]) < 1e-5);

    const int Cout = 1 + static_cast<int>(uniform01(rng) * 6);
    Tensor w = oracle::random_tensor({Cout, C}, rng, 2.0f);
    Tensor gp = conv1d_pointwise(x, w);
    Tensor wp = oracle::pointwise(x, w);
    for (std::size_t i = 0; i < gp.data.size(); ++i)
      CHECK(std::fabs(gp.data[i] - wp.data[i]) < 1e-5);
  }
}

TEST_CASE("output shapes obey the conv length formula") {
  std::mt19937 rng(7);
  for (int it = 0; it < 100; ++it) {
    const int T = 1 + static_cast<int>(uniform01(rng) * 40);
    const int K = 1 + static_cast<int>(uniform01(rng) * 8);
    const int stride = 1 + static_cast<int>(uniform01(rng) * 3.999f);
    const int pad = static_cast<int>(uniform01(rng) * 4.999f);
    if (K > T + 2 * pad) continue;
    Tensor x = Tensor::zeros({2, T});
    Tensor k = Tensor::zeros({2, K});
    Tensor out = conv1d_depthwise(x, k, stride, pad);
    CHECK(out.extent(1) == (T + 2 * pad - K) / stride + 1);
  }
}

TEST_CASE("batch norm train/eval behavior") {
  // constant input: output == beta everywhere
  BatchNormState st = BatchNormState::identity(2);
  st.gamma(0) = 3.0f;
  st.beta(0) = 0.7f;
  st.beta(1) = -0.2f;
  Tensor x = Tensor::full({2, 2, 4}, 5.0f);
  Tensor out = batch_norm(x, st, Mode::train);
  for (int b = 0; b < 2; ++b)
    for (int t = 0; t < 4; ++t) {
      CHECK(out(b, 0, t) == doctest::Approx(0.7f).epsilon(1e-3));
      CHECK(out(b, 1, t) == doctest::Approx(-0.2f).epsilon(1e-3));
    }

  // gamma=1, beta=0: normalized stats
  std::mt19937 rng(3);
  BatchNormState st2 = BatchNormState::identity(3);
  Tensor x2 = oracle::random_tensor({4, 3, 16}, rng, 5.0f);
  Tensor out2 = batch_norm(x2, st2, Mode::train);
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (int b = 0; b < 4; ++b)
      for (int t = 0; t < 16; ++t) {
        sum += out2(b, c, t);
        sq += out2(b, c, t) * out2(b, c, t);
      }
    const double n = 4 * 16;
    CHECK(std::fabs(sum / n) < 1e-4);
    CHECK(sq / n - (sum / n) * (sum / n) == doctest::Approx(1.0).epsilon(1e-3));
  }

  // eval mode: direct formula
  BatchNormState st3 = BatchNormState::identity(1);
  st3.gamma(0) = 2.0f;
  st3.beta(0) = 1.0f;
  st3.running_mean(0) = 0.5f;
  st3.running_var(0) = 4.0f;
  Tensor x3({1, 1, 3}, {1.0f, 2.0f, 3.0f});
  Tensor out3 = batch_norm(x3, st3, Mode::eval);
  for (int t = 0; t < 3; ++t) {
    const float want = 2.0f * (x3(0, 0, t) - 0.5f) / std::sqrt(4.0f + st3.epsilon) + 1.0f;
    CHECK(out3(0, 0, t) == doctest::Approx(want).epsilon(1e-6));
  }

  CHECK_THROWS_AS(batch_norm(Tensor({1, 2, 3}), st3, Mode::eval), ShapeError);
  BatchNormState bad = BatchNormState::identity(1);
  bad.epsilon = 0.0f;
  CHECK_THROWS_AS(batch_norm(x3, bad, Mode::eval), std::invalid_argument);
}

TEST_CASE("batch norm running stats follow the declared momentum") {
  BatchNormState st = BatchNormState::identity(1);
  Tensor x({2, 1, 4});
  for (int b = 0; b < 2; ++b)
    for (int t = 0; t < 4; ++t) x(b, 0, t) = static_cast<float>(b * 4 + t);
  const float m0 = st.running_mean(0), v0 = st.running_var(0);
  (void)batch_norm(x, st, Mode::train);
  // batch mean 3.5, biased variance 5.25
  CHECK(st.running_mean(0) == doctest::Approx((1 - st.momentum) * m0 + st.momentum * 3.5f));
  CHECK(st.running_var(0) == doctest::Approx((1 - st.momentum) * v0 + st.momentum * 5.25f));
}

TEST_CASE("activations: fixed points, bounds, totality") {
  Tensor z({1}, {0.0f});
  CHECK(activation(z, Activation::swish)(0) == doctest::Approx(0.0f));
  CHECK(activation(z, Activation::sigmoid)(0) == doctest::Approx(0.5f));
  Tensor one({1}, {1.0f});
  CHECK(activation(one, Activation::swish)(0) == doctest::Approx(0.731059f).epsilon(1e-5));

  // global minimum bound by dense sweep
  float lo = 0.0f;
  for (int i = -4000; i <= 4000; ++i) {
    const float v = i * 0.005f;
    lo = std::min(lo, swish_scalar(v));
  }
  CHECK(lo >= -0.2785f);

  // totality on [-100, 100]
  for (int i = -100; i <= 100; ++i) {
    const float v = static_cast<float>(i);
    for (Activation a : {Activation::identity, Activation::relu, Activation::sigmoid, Activation::swish})
      CHECK(std::isfinite(activation_scalar(v, a)));
  }
}

TEST_CASE("global average pool") {
  Tensor x({1, 4}, {1, 2, 3, 4});
  Tensor out = global_avg_pool(x);
  REQUIRE(out.shape == std::vector<int>{1});
  CHECK(out(0) == doctest::Approx(2.5f));

  Tensor c = Tensor::full({3, 7}, 1.25f);
  Tensor oc = global_avg_pool(c);
  REQUIRE(oc.shape == std::vector<int>{3});
  for (int i = 0; i < 3; ++i) CHECK(oc(i) == doctest::Approx(1.25f));

  CHECK_THROWS_AS(global_avg_pool(Tensor({2, 0})), ShapeError);
}

TEST_CASE("fully connected") {
  Tensor x({2}, {1, 2});
  Tensor W({1, 2}, {3, 4});
  Tensor b({1}, {1});
  CHECK(fully_connected(x, W, b)(0) == doctest::Approx(12));

  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor zb({2});
  Tensor same = fully_connected(x, eye, zb);
  CHECK(same(0) == 1);
  CHECK(same(1) == 2);

  Tensor zero({2});
  Tensor bb({2}, {0.5f, -0.5f});
  Tensor pass = fully_connected(zero, eye, bb);
  CHECK(pass(0) == doctest::Approx(0.5f));
  CHECK(pass(1) == doctest::Approx(-0.5f));

  CHECK_THROWS_AS(fully_connected(x, Tensor({1, 3}), b), ShapeError);
}

TEST_CASE("softmax contract") {
  Tensor u = Tensor::zeros({5});
  Tensor pu = softmax(u);
  for (int i = 0; i < 5; ++i) CHECK(pu(i) == doctest::Approx(0.2f).epsilon(1e-6));

  Tensor l({2}, {0.0f, std::log(2.0f)});
  Tensor p = softmax(l);
  CHECK(p(0) == doctest::Approx(1.0f / 3.0f).epsilon(1e-6));
  CHECK(p(1) == doctest::Approx(2.0f / 3.0f).epsilon(1e-6));

  std::mt19937 rng(5);
  for (int it = 0; it < 20; ++it) {
    Tensor logits = oracle::random_tensor({7}, rng, 10.0f);
    Tensor shifted = logits;
    const float c = uniform_symmetric(rng, 50.0f);
    for (float& v : shifted.data) v += c;
    Tensor a = softmax(logits), b = softmax(shifted);
    double sum = 0;
    for (int i = 0; i < 7; ++i) {
      CHECK(std::fabs(a(i) - b(i)) < 1e-6);
      CHECK(a(i) > 0.0f);
      sum += a(i);
    }
    CHECK(std::fabs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("dropout semantics") {
  std::mt19937 rng(11);
  Tensor x = Tensor::full({1000}, 1.0f);

  Tensor same = dropout(x, 0.0f, Mode::train, rng);
  for (float v : same.data) CHECK(v == 1.0f);
  Tensor ev = dropout(x, 0.5f, Mode::eval, rng);
  for (float v : ev.data) CHECK(v == 1.0f);

  // statistical expectation with inverted scaling
  Tensor big = Tensor::full({100000}, 1.0f);
  std::mt19937 rng2(123);
  Tensor dropped = dropout(big, 0.5f, Mode::train, rng2);
  double mean = 0;
  for (float v : dropped.data) mean += v;
  mean /= static_cast<double>(dropped.data.size());
  CHECK(mean > 0.98);
  CHECK(mean < 1.02);

  // determinism per seed
  std::mt19937 ra(77), rb(77);
  Tensor da = dropout(big, 0.3f, Mode::train, ra);
  Tensor db = dropout(big, 0.3f, Mode::train, rb);
  CHECK(da.data == db.data);

  CHECK_THROWS_AS(dropout(x, 1.0f, Mode::train, rng), std::invalid_argument);
}

TEST_CASE("backward passes match finite differences") {
  std::mt19937 rng(99);
  const double tol = 1e-3;

  SUBCASE("depthwise") {
    for (int it = 0; it < 20; ++it) {
      const int C = 1 + it % 3, T = 6 + it % 5, K = 3, stride = 1 + it % 2, pad = 1;
      Tensor x = oracle::random_tensor({C, T}, rng);
      Tensor k = oracle::random_tensor({C, K}, rng);
      Tensor out = conv1d_depthwise(x, k, stride, pad);
      Tensor w = oracle::random_tensor(out.shape, rng);
      LayerGrads g = conv1d_depthwise_backward(x, k, stride, pad, w);
      auto loss = [&] { return oracle::depthwise_loss(x, k, stride, pad, w); };
      for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(oracle::rel_err(g.input_grad.data[i], oracle::fd(loss, x.data[i])) < tol);
      for (std::size_t i = 0; i < k.data.size(); ++i)
        CHECK(oracle::rel_err(g.param_grads.at("kernels").data[i], oracle::fd(loss, k.data[i])) < tol);
    }
  }

  SUBCASE("pointwise") {
    for (int it = 0; it < 20; ++it) {
      const int Cin = 1 + it % 4, T = 5 + it % 4, Cout = 1 + (it + 1) % 3;
      Tensor x = oracle::random_tensor({Cin, T}, rng);
      Tensor wgt = oracle::random_tensor({Cout, Cin}, rng);
      Tensor out = conv1d_pointwise(x, wgt);
      Tensor w = oracle::random_tensor(out.shape, rng);
      LayerGrads g = conv1d_pointwise_backward(x, wgt, false, w);
      auto loss = [&] { return oracle::pointwise_loss(x, wgt, w); };
      for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(oracle::rel_err(g.input_grad.data[i], oracle::fd(loss, x.data[i])) < tol);
      for (std::size_t i = 0; i < wgt.data.size(); ++i)
        CHECK(oracle::rel_err(g.param_grads.at("weights").data[i], oracle::fd(loss, wgt.data[i])) < tol);
    }
  }

  SUBCASE("standard conv") {
    for (int it = 0; it < 20; ++it) {
      const int Cin = 1 + it % 3, T = 8, Cout = 1 + (it + 1) % 3, K = 3;
      Tensor x = oracle::random_tensor({Cin, T}, rng);
      Tensor wgt = oracle::random_tensor({Cout, Cin, K}, rng);
      Tensor out = conv1d_standard(x, wgt, 1, 1);
      Tensor w = oracle::random_tensor(out.shape, rng);
      LayerGrads g = conv1d_standard_backward(x, wgt, 1, 1, w);
      auto loss = [&] { return oracle::stdconv_loss(x, wgt, 1, 1, w); };
      for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(oracle::rel_err(g.input_grad.data[i], oracle::fd(loss, x.data[i])) < tol);
      for (std::size_t i = 0; i < wgt.data.size(); ++i)
        CHECK(oracle::rel_err(g.param_grads.at("weights").data[i], oracle::fd(loss, wgt.data[i])) < tol);
    }
  }

  SUBCASE("batch norm (train mode)") {
    for (int it = 0; it < 20; ++it) {
      const int B = 2 + it % 2, C = 1 + it % 3, T = 4 + it % 3;
      Tensor x = oracle::random_tensor({B, C, T}, rng, 2.0f);
      BatchNormState st = BatchNormState::identity(C);
      for (int c = 0; c < C; ++c) {
        st.gamma(c) = 1.0f + 0.2f * c;
        st.beta(c) = 0.1f * c;
      }
      Tensor w = oracle::random_tensor({B, C, T}, rng);
      BatchNormCache cache;
      BatchNormState run = st;
      Tensor out = batch_norm(x, run, Mode::train, &cache);
      LayerGrads g = batch_norm_backward(w, st, cache);
      auto loss = [&] { return oracle::bn_train_loss(x, st.gamma, st.beta, st.epsilon, w); };
      for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(oracle::rel_err(g.input_grad.data[i], oracle::fd(loss, x.data[i])) < tol);
      for (int c = 0; c < C; ++c) {
        CHECK(oracle::rel_err(g.param_grads.at("gamma")(c), oracle::fd(loss, st.gamma(c))) < tol);
        CHECK(oracle::rel_err(g.param_grads.at("beta")(c), oracle::fd(loss, st.beta(c))) < tol);
      }
    }
  }

  SUBCASE("fully connected identity Jacobian and zero upstream") {
    Tensor x({3}, {1, 2, 3});
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor g({3}, {0.5f, -1.0f, 2.0f});
    LayerGrads lg = fully_connected_backward(x, eye, g);
    for (int i = 0; i < 3; ++i) CHECK(lg.input_grad(i) == g(i));

    Tensor zero = Tensor::zeros({3});
    LayerGrads lz = fully_connected_backward(x, eye, zero);
    for (float v : lz.input_grad.data) CHECK(v == 0.0f);
    for (float v : lz.param_grads.at("W").data) CHECK(v == 0.0f);
  }

  SUBCASE("fully connected vs finite differences") {
    for (int it = 0; it < 20; ++it) {
      const int Din = 2 + it % 4, Dout = 1 + it % 3;
      Tensor x = oracle::random_tensor({Din}, rng);
      Tensor W = oracle::random_tensor({Dout, Din}, rng);
      Tensor b = oracle::random_tensor({Dout}, rng);
      Tensor w = oracle::random_tensor({Dout}, rng);
      LayerGrads g = fully_connected_backward(x, W, w);
      auto loss = [&] { return oracle::fc_loss(x, W, b, w); };
      for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(oracle::rel_err(g.input_grad.data[i], oracle::fd(loss, x.data[i])) < tol);
      for (std::size_t i = 0; i < W.data.size(); ++i)
        CHECK(oracle::rel_err(g.param_grads.at("W").data[i], oracle::fd(loss, W.data[i])) < tol);
      for (std::size_t i = 0; i < b.data.size(); ++i)
        CHECK(oracle::rel_err(g.param_grads.at("b").data[i], oracle::fd(loss, b.data[i])) < tol);
    }
  }

  SUBCASE("softmax and activations vs finite differences") {
    for (int it = 0; it < 20; ++it) {
      Tensor logits = oracle::random_tensor({5}, rng, 2.0f);
      Tensor w = oracle::random_tensor({5}, rng);
      Tensor probs = softmax(logits);
      Tensor g = softmax_backward(probs, w);
      auto loss = [&] { return oracle::softmax_loss(logits, w); };
      for (int i = 0; i < 5; ++i)
        CHECK(oracle::rel_err(g(i), oracle::fd(loss, logits(i))) < tol);

      Tensor x = oracle::random_tensor({8}, rng, 2.0f);
      Tensor wa = oracle::random_tensor({8}, rng);
      for (Activation a : {Activation::relu, Activation::sigmoid, Activation::swish}) {
        Tensor ga = activation_backward(x, a, wa);
        auto la = [&] { return oracle::act_loss(x, a, wa); };
        for (int i = 0; i < 8; ++i) {
          if (a == Activation::relu && std::fabs(x(i)) < 5e-3) continue;  // kink
          CHECK(oracle::rel_err(ga(i), oracle::fd(la, x.data[static_cast<std::size_t>(i)])) < tol);
        }
      }
    }
  }

  SUBCASE("zero upstream zeroes every gradient") {
    Tensor x = oracle::random_tensor({2, 6}, rng);
    Tensor k = oracle::random_tensor({2, 3}, rng);
    LayerGrads g = conv1d_depthwise_backward(x, k, 1, 1, Tensor::zeros({2, 6}));
    for (float v : g.input_grad.data) CHECK(v == 0.0f);
    for (float v : g.param_grads.at("kernels").data) CHECK(v == 0.0f);
  }
}

TEST_CASE("kernel determinism") {
  std::mt19937 r1(5), r2(5);
  Tensor x = oracle::random_tensor({3, 16}, r1);
  std::mt19937 r3(5);
  Tensor y = oracle::random_tensor({3, 16}, r3);
  CHECK(x.data == y.data);

  Tensor k = Tensor::full({3, 3}, 0.5f);
  CHECK(conv1d_depthwise(x, k, 1, 1).data == conv1d_depthwise(x, k, 1, 1).data);
}
