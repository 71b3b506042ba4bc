#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "npath/binary_io.hpp"
#include "npath/tensor.hpp"

using namespace npath;

TEST_CASE("tensor shape and element count agree") {
  Tensor t({2, 3, 4}, 1.5);
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.at(1, 2, 3) == 1.5);
  t.at(1, 2, 3) = 7.0;
  CHECK(t[23] == 7.0);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ValidationError);
  CHECK_THROWS_AS(Tensor({2, 0}), ValidationError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ValidationError);
  CHECK(t.reshaped({24}).dim(0) == 24);
}

TEST_CASE("tensor arithmetic") {
  const Tensor a = Tensor::vector({1, 2, 3});
  const Tensor b = Tensor::vector({4, -5, 6});
  CHECK(dot(a, b) == doctest::Approx(1 * 4 - 2 * 5 + 3 * 6));
  CHECK(squared_norm(a) == 14.0);
  CHECK(l2_norm(b) == doctest::Approx(std::sqrt(77.0)));
  CHECK((a + b).values() == std::vector<double>{5, -3, 9});
  CHECK((a - b).values() == std::vector<double>{-3, 7, -3});
  CHECK((a * 2.0).values() == std::vector<double>{2, 4, 6});
  CHECK_THROWS_AS(a + Tensor::vector({1, 2}), ValidationError);
}

TEST_CASE("bit equality distinguishes signed zero") {
  Tensor a = Tensor::vector({0.0, 1.0});
  Tensor b = Tensor::vector({-0.0, 1.0});
  CHECK(a.values() == b.values());
  CHECK_FALSE(a.bit_equal(b));
  CHECK(a.bit_equal(a));
}

TEST_CASE("all_finite flags NaN and infinity") {
  Tensor t = Tensor::vector({1.0, 2.0});
  CHECK(t.all_finite());
  t[1] = NAN;
  CHECK_FALSE(t.all_finite());
  t[1] = INFINITY;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("byte writer and reader round trip") {
  ByteWriter w;
  w.magic("TEST");
  w.u8(7);
  w.u16(0xBEEF);
  w.u32(123456789u);
  w.u64(0x0123456789ABCDEFULL);
  w.f64(-0.1);
  w.tensor(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
  ByteReader r(w.bytes(), "memory");
  r.expect_magic("TEST");
  CHECK(r.u8() == 7);
  CHECK(r.u16() == 0xBEEF);
  CHECK(r.u32() == 123456789u);
  CHECK(r.u64() == 0x0123456789ABCDEFULL);
  CHECK(r.f64() == -0.1);
  const Tensor t = r.tensor();
  CHECK(t.shape() == Shape{2, 2});
  CHECK(t[3] == 4.0);
  CHECK(r.at_end());
  CHECK_NOTHROW(r.expect_end());
}

TEST_CASE("byte reader rejects truncation, bad magic and trailing data") {
  ByteWriter w;
  w.magic("ABCD");
  w.u32(5);
  auto bytes = w.bytes();

  ByteReader wrong(bytes, "m");
  CHECK_THROWS_AS(wrong.expect_magic("WXYZ"), ValidationError);

  auto cut = bytes;
  cut.pop_back();
  ByteReader truncated(cut, "m");
  truncated.expect_magic("ABCD");
  CHECK_THROWS_AS(truncated.u32(), ValidationError);

  auto longer = bytes;
  longer.push_back(0);
  ByteReader trailing(longer, "m");
  trailing.expect_magic("ABCD");
  trailing.u32();
  CHECK_THROWS_AS(trailing.expect_end(), ValidationError);
}

TEST_CASE("missing files are validation errors") {
  CHECK_THROWS_AS(read_file("/nonexistent/dir/file.bin"), ValidationError);
}
