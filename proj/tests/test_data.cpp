#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "bhnd/data.h"
#include "test_util.h"

using namespace bhnd;
using namespace bhnd::data;
using bhnd::test::idx_images;
using bhnd::test::idx_labels;

TEST_CASE("parse a two-image IDX file") {
  const auto bytes = idx_images(2, 28, 28);
  CHECK(bytes.size() == 16 + 1568);
  const auto images = parse_idx_images(bytes);
  CHECK(images.count == 2);
  CHECK(images.rows == 28);
  CHECK(images.cols == 28);
  CHECK(images.pixels.size() == 1568);
  CHECK(images.pixels[300] == 300 % 256);
}

TEST_CASE("bad magic is a format error naming both values") {
  auto bytes = idx_images(1, 2, 2);
  bytes[3] = 0x01;
  try {
    parse_idx_images(bytes);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("0x00000801") != std::string::npos);
    CHECK(msg.find("0x00000803") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_idx_labels(idx_images(1, 2, 2)), FormatError);
}

TEST_CASE("truncated payload reports the byte offset") {
  auto bytes = idx_images(2, 28, 28);
  bytes.resize(1000);
  try {
    parse_idx_images(bytes);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("at byte offset 1000") != std::string::npos);
  }
  auto header = idx_images(1, 1, 1);
  header.resize(10);
  CHECK_THROWS_WITH_AS(parse_idx_images(header), doctest::Contains("at byte offset 10"), FormatError);
}

TEST_CASE("load_idx reads plain files and rejects count mismatch") {
  test::TempDir dir;
  test::write_bytes(dir / "img", idx_images(3, 4, 4));
  test::write_bytes(dir / "lab", idx_labels({1, 2, 3}));
  test::write_bytes(dir / "lab2", idx_labels({1, 2}));
  const auto raw = load_idx(dir / "img", dir / "lab");
  CHECK(raw.images.count == 3);
  CHECK(raw.labels == std::vector<std::uint8_t>{1, 2, 3});
  CHECK_THROWS_WITH_AS(load_idx(dir / "img", dir / "lab2"), doctest::Contains("mismatch"), FormatError);
  CHECK_THROWS_WITH_AS(load_idx(dir / "missing", dir / "lab"), doctest::Contains("missing"), IoError);
}

TEST_CASE("load_split accepts the standard names") {
  test::TempDir dir;
  test::write_bytes(dir / "t10k-images-idx3-ubyte", idx_images(5, 28, 28));
  test::write_bytes(dir / "t10k-labels-idx1-ubyte", idx_labels({0, 1, 2, 3, 9}));
  const auto ds = load_split(dir.path(), Split::test, Rescale::unit);
  CHECK(ds.size() == 5);
  CHECK(ds.images.shape() == Shape{5, 1, 32, 32});
  CHECK(ds.labels == std::vector<int>{0, 1, 2, 3, 9});
  CHECK_THROWS_AS(load_split(dir.path(), Split::train, Rescale::unit), IoError);
}

TEST_CASE("pad_to_32 centres and preserves pixel sums") {
  const auto raw = parse_idx_images(idx_images(2, 28, 28));
  const auto padded = pad_to_32(raw);
  CHECK(padded.rows == 32);
  CHECK(padded.cols == 32);
  CHECK(padded.count == 2);
  // Two-pixel border.
  for (int r = 0; r < 32; ++r) {
    for (int c = 0; c < 32; ++c) {
      const auto v = padded.pixels[static_cast<std::size_t>(r * 32 + c)];
      if (r < 2 || r >= 30 || c < 2 || c >= 30) CHECK(v == 0);
      else CHECK(v == raw.pixels[static_cast<std::size_t>((r - 2) * 28 + (c - 2))]);
    }
  }
  const auto total = [](const RawImages& im) {
    return std::accumulate(im.pixels.begin(), im.pixels.end(), std::int64_t{0});
  };
  CHECK(total(padded) == total(raw));

  const auto full = parse_idx_images(idx_images(1, 32, 32));
  CHECK(pad_to_32(full).pixels == full.pixels);
  CHECK_THROWS_AS(pad_to_32(parse_idx_images(idx_images(1, 33, 30))), ContractError);
}

TEST_CASE("rescale endpoints") {
  CHECK(rescale_pixel(0, Rescale::symmetric) == -1.0f);
  CHECK(rescale_pixel(255, Rescale::symmetric) == 1.0f);
  CHECK(rescale_pixel(127.5, Rescale::symmetric) == 0.0f);
  CHECK(rescale_pixel(0, Rescale::unit) == 0.0f);
  CHECK(rescale_pixel(255, Rescale::unit) == 1.0f);

  const auto raw = parse_idx_images(idx_images(1, 16, 16));
  const auto unit = rescale(raw, Rescale::unit);
  const auto sym = rescale(raw, Rescale::symmetric);
  CHECK(unit.shape() == Shape{1, 1, 16, 16});
  for (std::int64_t i = 0; i < unit.numel(); ++i) CHECK(sym.at(i) == doctest::Approx(2 * unit.at(i) - 1).epsilon(1e-6));
}

TEST_CASE("one_hot") {
  const auto e3 = one_hot(3, 10);
  CHECK(e3.shape() == Shape{10});
  for (int i = 0; i < 10; ++i) CHECK(e3.at(i) == (i == 3 ? 1.0f : 0.0f));
  const auto fake = one_hot(10, 11);
  CHECK(fake.at(10) == 1.0f);
  float total = 0.0f;
  for (float v : fake.data()) total += v;
  CHECK(total == 1.0f);
  const std::vector<int> labels{0, 4};
  const auto rows = one_hot(labels, 5);
  CHECK(rows.shape() == Shape{2, 5});
  CHECK(rows.at(4 + 5) == 1.0f);
  CHECK_THROWS_AS(one_hot(10, 10), ContractError);
}

TEST_CASE("batch iterator partitions an epoch") {
  BatchIterator it(10, 3, 42, false);
  CHECK(it.batches_per_epoch() == 4);
  std::vector<std::int64_t> seen;
  std::vector<std::size_t> sizes;
  for (int k = 0; k < 4; ++k) {
    const auto b = it.next();
    sizes.push_back(b.size());
    seen.insert(seen.end(), b.begin(), b.end());
  }
  CHECK(sizes == std::vector<std::size_t>{3, 3, 3, 1});
  std::sort(seen.begin(), seen.end());
  std::vector<std::int64_t> all(10);
  std::iota(all.begin(), all.end(), 0);
  CHECK(seen == all);
}

TEST_CASE("batch iterator is reproducible and addressable") {
  BatchIterator a(50, 8, 7, true), b(50, 8, 7, true), c(50, 8, 8, true);
  std::vector<std::int64_t> sa, sb, sc;
  for (int k = 0; k < 20; ++k) {
    const auto x = a.next(), y = b.next(), z = c.next();
    sa.insert(sa.end(), x.begin(), x.end());
    sb.insert(sb.end(), y.begin(), y.end());
    sc.insert(sc.end(), z.begin(), z.end());
  }
  CHECK(sa == sb);
  CHECK(sa != sc);
  BatchIterator d(50, 8, 7, true);
  d.seek(13);
  CHECK(d.next() == std::vector<std::int64_t>(sa.begin() + 13 * 8, sa.begin() + 14 * 8));
  // Epochs reshuffle.
  CHECK(a.batch(0) != a.batch(a.batches_per_epoch()));
}

TEST_CASE("drop_last discards the ragged batch") {
  BatchIterator it(10, 3, 1, true);
  CHECK(it.batches_per_epoch() == 3);
  std::set<std::int64_t> seen;
  for (int k = 0; k < 3; ++k) {
    const auto b = it.next();
    CHECK(b.size() == 3);
    seen.insert(b.begin(), b.end());
  }
  CHECK(seen.size() == 9);
  CHECK_THROWS_AS(BatchIterator(0, 3, 1, false), ContractError);
}

TEST_CASE("make_dataset keeps label association") {
  RawDataset raw;
  raw.images = parse_idx_images(idx_images(4, 28, 28));
  raw.labels = {3, 1, 4, 1};
  const auto ds = make_dataset(raw, Split::train, Rescale::unit);
  CHECK(ds.size() == 4);
  for (int n = 0; n < 4; ++n) {
    // Pixel (2, 2) of padded image n is raw pixel (0, 0) of image n.
    const auto expected = static_cast<float>((n * 784) % 256) / 255.0f;
    CHECK(ds.images.at(n * 1024 + 2 * 32 + 2) == doctest::Approx(expected));
  }
  const std::vector<std::int64_t> idx{2, 0};
  const auto sub = ds.subset(idx);
  CHECK(sub.labels == std::vector<int>{4, 3});
  CHECK(sub.images.at(2 * 32 + 2) == ds.images.at(2 * 1024 + 2 * 32 + 2));
  const auto both = Dataset::concat(ds, ds.slice(1, 3));
  CHECK(both.size() == 6);
  CHECK(both.labels[5] == 4);
  raw.labels[0] = 10;
  CHECK_THROWS_AS(make_dataset(raw, Split::train, Rescale::unit), FormatError);
}
