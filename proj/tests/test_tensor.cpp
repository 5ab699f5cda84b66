#include <doctest.h>

#include <cmath>
#include <random>

#include "grad_suite.hpp"
#include "oracles.hpp"
#include "pdcycon/checkpoint.hpp"
#include "pdcycon/error.hpp"
#include "pdcycon/optim.hpp"
#include "pdcycon/tensor.hpp"

using namespace pdcycon;
using namespace pdcycon::nn;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("op gradients match central differences") {
  for (std::uint64_t seed : {1u, 2u}) {
    for (const auto& r : grad_suite::op_checks(seed)) {
      INFO(r.name, " seed ", seed, " worst ", r.check.worst);
      CHECK(r.check.checked > 0);
      CHECK(r.check.max_rel_error <= r.limit());
    }
  }
}

TEST_CASE("full loss gradient on the narrow model") {
  const auto r = grad_suite::full_loss_check(3);
  INFO(r.check.worst);
  CHECK(r.check.max_rel_error <= r.limit());
  const auto d = grad_suite::directional_loss_check(3);
  INFO(d.check.worst);
  CHECK(d.check.max_rel_error <= d.limit());
}

TEST_CASE("conv2d geometry and values") {
  SUBCASE("output size") {
    std::mt19937_64 rng(1);
    auto x = oracle::random_tensor(rng, {1, 1, 128, 257}, -1, 1, false);
    auto w = oracle::random_tensor(rng, {8, 1, 7, 7}, -1, 1, false);
    auto b = Tensor::zeros({8});
    const auto y = conv2d(x, w, b, 2);
    CHECK(y.shape() == Shape{1, 8, 61, 126});
  }
  SUBCASE("centre tap kernel crops the input") {
    std::mt19937_64 rng(2);
    auto x = oracle::random_tensor(rng, {1, 1, 10, 12}, -1, 1, false);
    auto w = Tensor::zeros({1, 1, 7, 7});
    w.data()[3 * 7 + 3] = 1.0;
    const auto y = conv2d(x, w, Tensor::zeros({1}), 1);
    REQUIRE(y.shape() == Shape{1, 1, 4, 6});
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 6; ++j) CHECK(y.data()[i * 6 + j] == x.data()[(i + 3) * 12 + (j + 3)]);
    }
  }
  SUBCASE("matches a direct cross-correlation") {
    std::mt19937_64 rng(3);
    auto x = oracle::random_tensor(rng, {2, 3, 9, 8}, -1, 1, false);
    auto w = oracle::random_tensor(rng, {4, 3, 3, 3}, -1, 1, false);
    auto b = oracle::random_tensor(rng, {4}, -1, 1, false);
    const auto y = conv2d(x, w, b, 2);
    REQUIRE(y.shape() == Shape{2, 4, 4, 3});
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t o = 0; o < 4; ++o) {
        for (std::size_t i = 0; i < 4; ++i) {
          for (std::size_t j = 0; j < 3; ++j) {
            double s = b.data()[o];
            for (std::size_t c = 0; c < 3; ++c) {
              for (std::size_t ki = 0; ki < 3; ++ki) {
                for (std::size_t kj = 0; kj < 3; ++kj) {
                  s += w.data()[((o * 3 + c) * 3 + ki) * 3 + kj] *
                       x.data()[((n * 3 + c) * 9 + 2 * i + ki) * 8 + 2 * j + kj];
                }
              }
            }
            CHECK(y.data()[((n * 4 + o) * 4 + i) * 3 + j] == doctest::Approx(s).epsilon(1e-12));
          }
        }
      }
    }
  }
  SUBCASE("input smaller than the kernel") {
    auto x = Tensor::zeros({1, 1, 6, 20});
    auto w = Tensor::zeros({1, 1, 7, 7});
    CHECK(code_of([&] { conv2d(x, w, Tensor::zeros({1}), 2); }) == ErrorCode::InputTooSmall);
  }
  SUBCASE("channel mismatch") {
    auto x = Tensor::zeros({1, 2, 8, 8});
    auto w = Tensor::zeros({1, 1, 3, 3});
    CHECK(code_of([&] { conv2d(x, w, Tensor::zeros({1}), 1); }) == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("batch normalization") {
  std::mt19937_64 rng(4);
  auto x = oracle::random_tensor(rng, {4, 2, 3, 5}, -3, 5, false);
  auto gamma = Tensor::from({2}, {1.7, -0.6});
  auto beta = Tensor::from({2}, {0.3, -2.0});
  BatchNormState st(2);
  const auto y = batchnorm2d(x, gamma, beta, st, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0, s2 = 0.0, xs = 0.0, xs2 = 0.0;
    const std::size_t count = 4 * 15;
    for (std::size_t n = 0; n < 4; ++n) {
      for (std::size_t k = 0; k < 15; ++k) {
        const double v = y.data()[(n * 2 + c) * 15 + k];
        const double u = x.data()[(n * 2 + c) * 15 + k];
        s += v;
        s2 += v * v;
        xs += u;
        xs2 += u * u;
      }
    }
    const double mean = s / count;
    const double sd = std::sqrt(s2 / count - mean * mean);
    CHECK(mean == doctest::Approx(beta.data()[c]).epsilon(1e-6));
    // eps = 1e-5 inside the square root pulls the deviation slightly below |gamma|.
    const double xmean = xs / count;
    const double xvar = xs2 / count - xmean * xmean;
    CHECK(sd == doctest::Approx(std::abs(gamma.data()[c]) * std::sqrt(xvar / (xvar + 1e-5))).epsilon(1e-6));
    CHECK(st.running_mean[c] == doctest::Approx(0.1 * xmean));
    CHECK(st.running_var[c] == doctest::Approx(0.9 + 0.1 * xvar * count / (count - 1)));
  }

  SUBCASE("standardized input passes through") {
    auto z = Tensor::from({2, 1, 1, 2}, {1.0, -1.0, 1.0, -1.0});
    BatchNormState s1(1);
    const auto out = batchnorm2d(z, Tensor::full({1}, 1.0), Tensor::zeros({1}), s1, true);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.data()[i] == doctest::Approx(z.data()[i]).epsilon(1e-5));
  }
  SUBCASE("eval mode uses the running estimates") {
    BatchNormState s2(1);
    s2.running_mean = {2.0};
    s2.running_var = {4.0};
    auto z = Tensor::from({1, 1, 1, 2}, {2.0, 6.0});
    const auto out = batchnorm2d(z, Tensor::full({1}, 1.0), Tensor::full({1}, 0.5), s2, false);
    CHECK(out.data()[0] == doctest::Approx(0.5));
    CHECK(out.data()[1] == doctest::Approx(0.5 + 4.0 / std::sqrt(4.0 + 1e-5)));
    CHECK(s2.running_mean[0] == 2.0);
  }
}

TEST_CASE("elementwise ops, pooling and reshaping") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(relu(Tensor::from({3}, {-1.0, 0.0, 2.0})).data()[2] == 2.0);

  const auto gap = global_avg_pool(Tensor::full({2, 3, 4, 5}, 1.25), {2, 3});
  CHECK(gap.shape() == Shape{2, 3});
  for (double v : gap.data()) CHECK(v == doctest::Approx(1.25));

  std::mt19937_64 rng(6);
  auto x = oracle::random_tensor(rng, {2, 3, 4, 5}, -1, 1, false);
  const auto same = scale_along_axis(x, Tensor::full({4}, 1.0), 2);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same.data()[i] == x.data()[i]);
  auto e1 = Tensor::zeros({4});
  e1.data()[1] = 1.0;
  const auto picked = scale_along_axis(x, e1, 2);
  for (std::size_t n = 0; n < 6; ++n) {
    for (std::size_t k = 0; k < 4; ++k) {
      for (std::size_t j = 0; j < 5; ++j) {
        const std::size_t idx = (n * 4 + k) * 5 + j;
        CHECK(picked.data()[idx] == (k == 1 ? x.data()[idx] : 0.0));
      }
    }
  }
  CHECK(code_of([&] { scale_along_axis(x, Tensor::zeros({3}), 2); }) == ErrorCode::ShapeMismatch);

  const auto cat = concat({x, x}, 1);
  CHECK(cat.shape() == Shape{2, 6, 4, 5});
  const auto back = narrow(cat, 1, 3, 3);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.data()[i] == x.data()[i]);
  CHECK(code_of([&] { concat({x, Tensor::zeros({2, 3, 4, 6})}, 1); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { reshape(x, {7, 7}); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { add(x, Tensor::zeros({2})); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("losses") {
  const std::vector<double> one{1.0}, zero{0.0};
  CHECK(bce_loss(Tensor::from({1}, {0.5}), one).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(Tensor::from({1}, {0.5}), zero).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(Tensor::from({1}, {1.0}), one).item() == doctest::Approx(-std::log(1.0 - kProbClamp)));
  CHECK(std::isfinite(bce_loss(Tensor::from({1}, {0.0}), one).item()));
  CHECK(bce_with_logits(Tensor::from({1}, {0.0}), one).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::isfinite(bce_with_logits(Tensor::from({1}, {-800.0}), one).item()));

  CHECK(bidirectional_kl(Tensor::from({1}, {0.9}), Tensor::from({1}, {0.1})).item() ==
        doctest::Approx(0.8 * std::log(9.0)).epsilon(1e-12));
  CHECK(0.8 * std::log(9.0) == doctest::Approx(1.7578).epsilon(1e-4));
  auto p = Tensor::from({3}, {0.2, 0.5, 0.7});
  CHECK(bidirectional_kl(p, p).item() == 0.0);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    auto a = oracle::random_tensor(rng, {6}, 0.0, 1.0, false);
    auto b = oracle::random_tensor(rng, {6}, 0.0, 1.0, false);
    CHECK(bidirectional_kl(a, b).item() >= 0.0);
  }
  CHECK(code_of([&] { bidirectional_kl(p, Tensor::zeros({2})); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("backward accumulates") {
  std::mt19937_64 rng(10);
  auto x = oracle::random_tensor(rng, {2, 3});
  auto w = oracle::random_tensor(rng, {4, 3});
  auto b = oracle::random_tensor(rng, {4});
  auto y = sum(sigmoid(fully_connected(x, w, b)));
  y.backward();
  const std::vector<double> first(w.grad().begin(), w.grad().end());
  y.backward();
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(w.grad()[i] == 2.0 * first[i]);
  w.zero_grad();
  for (double g : w.grad()) CHECK(g == 0.0);

  SUBCASE("shared subexpressions add their contributions") {
    auto a = Tensor::from({2}, {1.0, 2.0}, true);
    const auto s = add(a, a);
    dot_const(s, std::vector<double>{3.0, 5.0}).backward();
    CHECK(a.grad()[0] == 6.0);
    CHECK(a.grad()[1] == 10.0);
  }
  SUBCASE("no-grad guard records nothing") {
    auto a = Tensor::from({1}, {1.0}, true);
    Tensor out;
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      out = mul_scalar(a, 2.0);
    }
    CHECK(grad_enabled());
    CHECK_FALSE(out.requires_grad());
  }
}

TEST_CASE("Adam") {
  SUBCASE("zero gradient leaves weights and decays moments") {
    Param p("w", Tensor::from({2}, {1.0, -2.0}, true));
    p.m = {0.5, 0.5};
    p.v = {0.25, 0.25};
    std::vector<Param*> ps{&p};
    adam_step(ps, {});
    // m_hat = 0.45 / 0.1 is not zero, so only check the moments here.
    CHECK(p.m[0] == doctest::Approx(0.45));
    CHECK(p.v[0] == doctest::Approx(0.2475));
    CHECK(p.step == 1);

    Param q("w", Tensor::from({2}, {1.0, -2.0}, true));
    std::vector<Param*> qs{&q};
    adam_step(qs, {});
    CHECK(q.value.data()[0] == 1.0);
    CHECK(q.value.data()[1] == -2.0);
  }
  SUBCASE("first step moves by lr against the gradient") {
    Param p("w", Tensor::from({2}, {0.0, 0.0}, true));
    p.value.grad()[0] = 3.0;
    p.value.grad()[1] = -0.01;
    std::vector<Param*> ps{&p};
    adam_step(ps, {0.01, 0.9, 0.99, 1e-8});
    CHECK(p.value.data()[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p.value.data()[1] == doctest::Approx(0.01).epsilon(1e-5));
  }
  SUBCASE("quadratic bowl") {
    Param p("w", Tensor::from({1}, {1.0}, true));
    std::vector<Param*> ps{&p};
    for (int i = 0; i < 200; ++i) {
      zero_grads(ps);
      const auto w = p.value;
      // w * const(w) has gradient w; double it for d(w^2)/dw.
      dot_const(w, std::vector<double>{w.data()[0]}).backward();
      p.value.grad()[0] *= 2.0;
      adam_step(ps, {0.1, 0.9, 0.99, 1e-8});
    }
    CHECK(std::abs(p.value.data()[0]) < 0.05);
  }
}

TEST_CASE("checkpoint files") {
  oracle::TempDir dir("ckpt");
  Checkpoint c;
  c.fold = 3;
  c.seed = 0xdeadbeefcafeULL;
  c.epoch = 17;
  c.metric = 0.8125;
  c.config_text = "lr=0.001\nepochs=5\n";
  c.blobs.push_back({"a.weight", {2, 3}, {1, 2, 3, 4, 5, 6}, {0.1, 0, 0, 0, 0, 0}, {0.2, 0, 0, 0, 0, 0}, 9});
  c.blobs.push_back({"bn.running_mean", {2}, {0.5, -0.5}, {}, {}, 0});
  write_checkpoint(dir / "c.pdck", c);
  CHECK_FALSE(std::filesystem::exists(dir / "c.pdck.tmp"));
  const auto r = read_checkpoint(dir / "c.pdck");
  CHECK(r.fold == 3);
  CHECK(r.seed == c.seed);
  CHECK(r.epoch == 17);
  CHECK(r.metric == 0.8125);
  CHECK(r.config_text == c.config_text);
  REQUIRE(r.blobs.size() == 2);
  CHECK(r.blobs[0].shape == Shape{2, 3});
  CHECK(r.blobs[0].data == c.blobs[0].data);
  CHECK(r.blobs[0].m == c.blobs[0].m);
  CHECK(r.blobs[0].step == 9);
  CHECK_FALSE(r.blobs[1].has_optimizer_state());
  REQUIRE(r.find("bn.running_mean") != nullptr);
  CHECK(r.find("nope") == nullptr);

  const std::string bytes = oracle::slurp(dir / "c.pdck");
  CHECK(bytes.substr(0, 4) == "PDCK");
  auto write = [&](const std::string& name, const std::string& b) {
    std::ofstream(dir / name, std::ios::binary) << b;
  };
  write("short.pdck", bytes.substr(0, bytes.size() - 3));
  CHECK(code_of([&] { read_checkpoint(dir / "short.pdck"); }) == ErrorCode::TruncatedPayload);
  write("long.pdck", bytes + "x");
  CHECK(code_of([&] { read_checkpoint(dir / "long.pdck"); }) == ErrorCode::DimMismatch);
  write("magic.pdck", "PDCX" + bytes.substr(4));
  CHECK(code_of([&] { read_checkpoint(dir / "magic.pdck"); }) == ErrorCode::BadMagic);
  CHECK(code_of([&] { read_checkpoint(dir / "none.pdck"); }) == ErrorCode::MissingCheckpoint);
}
