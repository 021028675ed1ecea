#include "support.hpp"

using namespace hlab;

TEST(TorusGrid, RejectsOddOrTinySide) {
  EXPECT_THROW(TorusGrid(2, 5), InvalidArgument);
  EXPECT_THROW(TorusGrid(2, 0), InvalidArgument);
  EXPECT_THROW(TorusGrid(0, 4), InvalidArgument);
  EXPECT_NO_THROW(TorusGrid(3, 2));
}

TEST(TorusGrid, IndexRoundTripAndWrap) {
  const TorusGrid g(3, 6);
  EXPECT_EQ(g.size(), 216u);
  for (std::size_t x = 0; x < g.size(); ++x) EXPECT_EQ(g.index(g.coords(x)), x);
  EXPECT_EQ(g.index({-1, 0, 0}), g.index({5, 0, 0}));
  EXPECT_EQ(g.index({7, -7, 12}), g.index({1, 5, 0}));
}

TEST(TorusGrid, CenteredRepresentative) {
  const TorusGrid g(2, 8);
  for (std::size_t x = 0; x < g.size(); ++x)
    for (int c : g.centered(x)) {
      EXPECT_GE(c, -4);
      EXPECT_LT(c, 4);
    }
  EXPECT_EQ(g.centered(g.index({7, 4})), (std::vector<int>{-1, -4}));
}

TEST(TorusGrid, ShiftAddNegate) {
  const TorusGrid g(2, 4);
  const auto x = g.index({3, 1});
  EXPECT_EQ(g.shift(x, 0, +1), g.index({0, 1}));
  EXPECT_EQ(g.shift(x, 1, -2), g.index({3, 3}));
  EXPECT_EQ(g.add(x, g.index({2, 3})), g.index({1, 0}));
  EXPECT_EQ(g.add(x, g.negate(x)), 0u);
}

TEST(Field, TranslateIsShift) {
  const TorusGrid g(2, 6);
  const auto f = test::random_real(g, 2, 1);
  const auto y = g.index({2, -1});
  const auto t = translate(f, y);
  for (std::size_t x = 0; x < g.size(); ++x)
    for (int c = 0; c < 2; ++c) EXPECT_EQ(t(c, x), f(c, g.add(x, y)));
}

TEST(Field, InnerIsConjugateLinear) {
  const TorusGrid g(1, 8);
  const auto f = test::random_complex(g, 1, 2);
  const auto h = test::random_complex(g, 1, 3);
  auto fi = f;
  fi *= cplx(0.0, 1.0);
  EXPECT_NEAR(std::abs(inner(fi, h) - cplx(0.0, -1.0) * inner(f, h)), 0.0, 1e-12);
  EXPECT_NEAR(norm2(f) * norm2(f), inner(f, f).real(), 1e-10);
}

TEST(Field, MismatchedShapesThrow) {
  RealField a(TorusGrid(1, 4), 1), b(TorusGrid(1, 6), 1);
  EXPECT_THROW(a += b, InvalidArgument);
}
