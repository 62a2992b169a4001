#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "loris/conditioning.hpp"
#include "loris/errors.hpp"
#include "testutil.hpp"

using namespace loris;
using Td = Tensor<double>;

namespace {

// Standard sinusoidal positional encoding of a (possibly fractional)
// position, channel-by-channel in plain doubles.
double std_pe(double pos, int k, int c) {
  double omega = std::pow(10000.0, -2.0 * (k / 2) / c);
  return (k % 2 == 0) ? std::sin(omega * pos) : std::cos(omega * pos);
}

ParamList<double> plist(const ConditioningEncoders<double>& e) {
  ParamList<double> out;
  e.params(out, "cond");
  return out;
}

std::vector<Td> tensors_of(const ParamList<double>& l) {
  std::vector<Td> out;
  for (auto& p : l) out.push_back(p.tensor);
  return out;
}

}  // namespace

TEST_CASE("zero-weight BiLSTM maps anything to zero") {
  BiLstmEncoder<double> e;
  e.fwd = {Td::zeros({3, 16}), Td::zeros({4, 16}), Td::zeros({16}), 4};
  e.bwd = e.fwd;
  e.proj = LinearLayer<double>::zeros(8, 6);
  std::mt19937 rng(3);
  Td x = Td::randn({5, 3}, rng);
  Td out = e(x);
  CHECK(out.shape() == Shape{5, 6});
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("BiLSTM output shape is T x C") {
  std::mt19937 rng(5);
  auto e = BiLstmEncoder<double>::init(7, 4, 10, rng);
  CHECK(e(Td::randn({1, 7}, rng)).shape() == Shape{1, 10});
  CHECK(e(Td::randn({9, 7}, rng)).shape() == Shape{9, 10});
}

TEST_CASE("single LSTM step matches hand-computed gates") {
  // D_in = 1, H = 2, all weights distinct small constants
  LstmWeights<double> w;
  w.hidden = 2;
  w.w_ih = Td::from({1, 8}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
  w.w_hh = Td::zeros({2, 8});
  w.bias = Td::from({8}, {0.05, -0.05, 0.1, -0.1, 0.2, -0.2, 0.3, -0.3});

  double xv = 0.7;
  LstmState<double> st{Td::zeros({1, 2}), Td::zeros({1, 2})};
  auto next = lstm_cell(Td::from({1, 1}, {xv}), st, w);

  auto sg = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (int u = 0; u < 2; ++u) {
    double i = sg(xv * w.w_ih.data()[u] + w.bias.data()[u]);
    double f = sg(xv * w.w_ih.data()[2 + u] + w.bias.data()[2 + u]);
    double g = std::tanh(xv * w.w_ih.data()[4 + u] + w.bias.data()[4 + u]);
    double o = sg(xv * w.w_ih.data()[6 + u] + w.bias.data()[6 + u]);
    double c = f * 0.0 + i * g;
    double h = o * std::tanh(c);
    CHECK(next.c.data()[u] == doctest::Approx(c).epsilon(1e-12));
    CHECK(next.h.data()[u] == doctest::Approx(h).epsilon(1e-12));
  }
}

TEST_CASE("Hawkes with w=0 is the standard positional encoding") {
  int c = 16;
  auto p = HawkesParams<double>::init(c);
  std::vector<double> times{0.3, 1.7, 2.2, 5.9, 8.1};
  Td enc = hawkes_encoding(times, p);
  REQUIRE(enc.shape() == Shape{5, c});
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < c; ++k)
      CHECK(std::fabs(enc.data()[i * c + k] - std_pe(i, k, c)) < 1e-12);
}

TEST_CASE("Hawkes with w=omega encodes position i + t_i") {
  int c = 12;
  auto p = HawkesParams<double>::init(c);
  p.w = p.omega.detach();
  std::vector<double> times{0.5, 2.0, 3.25};
  Td enc = hawkes_encoding(times, p);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < c; ++k)
      CHECK(std::fabs(enc.data()[i * c + k] - std_pe(i + times[i], k, c)) < 1e-12);
}

TEST_CASE("time-shift invariance holds exactly when w=0") {
  int c = 8;
  std::vector<double> times{0.4, 1.1, 3.0};
  std::vector<double> shifted{1.4, 2.1, 4.0};

  auto p0 = HawkesParams<double>::init(c);
  Td a = hawkes_encoding(times, p0);
  Td b = hawkes_encoding(shifted, p0);
  CHECK((a.vec() - b.vec()).cwiseAbs().maxCoeff() == 0.0);

  auto p1 = HawkesParams<double>::init(c);
  p1.w = Td::full({c}, 0.7);
  Td a1 = hawkes_encoding(times, p1);
  Td b1 = hawkes_encoding(shifted, p1);
  CHECK((a1.vec() - b1.vec()).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("empty peaks give an empty encoding") {
  auto p = HawkesParams<double>::init(6);
  CHECK(hawkes_encoding(std::vector<double>{}, p).shape() == Shape{0, 6});
}

TEST_CASE("identity-initialized decoder passes tokens through exactly") {
  std::mt19937 rng(11);
  int c = 8;
  auto e = RhythmEncoder<double>::init(c, 2, rng);
  // residual-only paths: zero attention output projection and zero FF tail
  e.dec.attn.wo = Td::zeros({c, c});
  e.dec.ff2 = LinearLayer<double>::zeros(4 * c, c);

  std::vector<double> times{0.2, 0.9, 1.5};
  Td expect = add(hawkes_encoding(times, e.hawkes), e.token);
  Td got = e(times);
  REQUIRE(got.shape() == expect.shape());
  for (long i = 0; i < got.size(); ++i)
    CHECK(got.data()[i] == expect.data()[i]);
}

TEST_CASE("rhythm encoding is position-dependent") {
  std::mt19937 rng(13);
  auto e = RhythmEncoder<double>::init(8, 2, rng);
  // with w=0 only the ordinal index matters; couple the timestamps in
  e.hawkes.w = e.hawkes.omega.detach();
  Td a = e(std::vector<double>{0.1, 0.9, 2.0});
  Td b = e(std::vector<double>{2.0, 0.9, 0.1});
  CHECK((a.vec() - b.vec()).cwiseAbs().maxCoeff() > 1e-6);
  CHECK(e(std::vector<double>{0.3, 0.8, 1.1, 2.2}).shape() == Shape{4, 8});
}

TEST_CASE("rhythm encoding deterministic given weights and peaks") {
  std::mt19937 rng(17);
  auto e = RhythmEncoder<double>::init(8, 2, rng);
  std::vector<double> times{0.2, 1.4, 2.6};
  Td a = e(times);
  Td b = e(times);
  CHECK((a.vec() - b.vec()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("genre embedding looks up one row and routes gradient to it") {
  std::mt19937 rng(19);
  Td table = Td::randn({5, 6}, rng);
  Td row = encode_genre(3, table);
  REQUIRE(row.shape() == Shape{1, 6});
  for (int k = 0; k < 6; ++k) CHECK(row.data()[k] == table.data()[3 * 6 + k]);
  CHECK_THROWS_AS(encode_genre(5, table), DomainError);

  table.set_requires_grad(true);
  {
    Tape<double> tape;
    tape.backward(sum(square(encode_genre(3, table))));
  }
  double off_row = 0, on_row = 0;
  for (int r = 0; r < 5; ++r)
    for (int k = 0; k < 6; ++k)
      (r == 3 ? on_row : off_row) += std::fabs(table.grad()[r * 6 + k]);
  CHECK(off_row == 0.0);
  CHECK(on_row > 0.0);
}

TEST_CASE("assemble concatenates serially and preserves content") {
  std::mt19937 rng(23);
  int c = 6;
  Td cg = Td::randn({1, c}, rng);
  Td cv = Td::randn({8, c}, rng);
  Td cr = Td::randn({5, c}, rng);
  Td null_tok = Td::randn({c}, rng);

  auto full = assemble(cv, cr, cg, false, null_tok);
  REQUIRE(full.seq.shape() == Shape{14, c});
  CHECK(!full.null_flag);
  // order [genre; visual; rhythm], each block bit-exact at its offset
  for (int k = 0; k < c; ++k) CHECK(full.seq.data()[k] == cg.data()[k]);
  for (long i = 0; i < cv.size(); ++i)
    CHECK(full.seq.data()[c + i] == cv.data()[i]);
  for (long i = 0; i < cr.size(); ++i)
    CHECK(full.seq.data()[9 * c + i] == cr.data()[i]);

  auto no_genre = assemble(cv, cr, Td{}, false, null_tok);
  CHECK(no_genre.seq.shape() == Shape{13, c});

  auto dropped = assemble(cv, cr, cg, true, null_tok);
  CHECK(dropped.null_flag);
  REQUIRE(dropped.seq.shape() == Shape{1, c});
  for (int k = 0; k < c; ++k) CHECK(dropped.seq.data()[k] == null_tok.data()[k]);

  Td bad = Td::randn({3, c + 1}, rng);
  CHECK_THROWS_AS(assemble(cv, bad, cg, false, null_tok), DimensionError);
}

TEST_CASE("gradients through every encoder pass finite differences") {
  std::mt19937 rng(29);
  auto enc = ConditioningEncoders<double>::init(/*d_in=*/3, /*hidden=*/3,
                                                /*c=*/8, /*heads=*/2,
                                                /*n_genres=*/4, rng);
  Td feats = Td::randn({5, 3}, rng);
  std::vector<double> times{0.2, 0.8, 1.7, 2.4};

  auto loss = [&]() {
    Td cv = enc.visual(feats);
    Td cr = enc.rhythm(times);
    Td cg = encode_genre(2, enc.genre_table);
    auto set = assemble(cv, cr, cg, false, enc.null_token);
    return mean(square(set.seq));
  };
  double worst = testutil::max_fd_rel_err(tensors_of(plist(enc)), loss, rng, 6);
  CHECK(worst < 1e-3);
}
