#include <doctest.h>

#include <fstream>
#include <set>

#include "agd/common.hpp"
#include "agd/data.hpp"
#include "../support/fixtures.hpp"

using namespace agd;

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               std::uint32_t image_magic, std::uint32_t count, std::uint32_t label_count,
               std::size_t pixel_bytes) {
  std::ofstream im(images, std::ios::binary);
  put_u32(im, image_magic);
  put_u32(im, count);
  put_u32(im, 2);
  put_u32(im, 3);
  for (std::size_t i = 0; i < pixel_bytes; ++i) im.put(static_cast<char>(i * 40 % 256));
  std::ofstream lb(labels, std::ios::binary);
  put_u32(lb, 0x00000801);
  put_u32(lb, label_count);
  for (std::uint32_t i = 0; i < label_count; ++i) lb.put(static_cast<char>(i % 2));
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Config;
}

}  // namespace

TEST_CASE("IDX files parse from hand-built bytes") {
  const auto dir = fixture::temp_dir("idx");
  write_idx(dir / "im", dir / "lb", 0x00000803, 2, 2, 12);
  const LabeledSet s = load_idx(dir / "im", dir / "lb");
  REQUIRE(s.size() == 2);
  CHECK(s.image_shape() == Shape{1, 2, 3});
  CHECK(s.images[0][1] == doctest::Approx(40.0 / 255.0));
  CHECK(s.images[1][0] == doctest::Approx(240.0 / 255.0));
  CHECK(s.labels == std::vector<std::size_t>{0, 1});
  CHECK(s.class_count == 2);
}

TEST_CASE("IDX errors are data errors") {
  const auto dir = fixture::temp_dir("idx-bad");
  write_idx(dir / "magic", dir / "lb1", 0x00000802, 2, 2, 12);
  CHECK(kind_of([&] { load_idx(dir / "magic", dir / "lb1"); }) == ErrorKind::Data);
  write_idx(dir / "short", dir / "lb2", 0x00000803, 2, 2, 7);
  CHECK(kind_of([&] { load_idx(dir / "short", dir / "lb2"); }) == ErrorKind::Data);
  write_idx(dir / "count", dir / "lb3", 0x00000803, 2, 3, 12);
  CHECK(kind_of([&] { load_idx(dir / "count", dir / "lb3"); }) == ErrorKind::Data);
  CHECK(kind_of([&] { load_idx(dir / "none", dir / "lb3"); }) == ErrorKind::Data);
}

TEST_CASE("synthetic data") {
  const SynthConfig cfg = fixture::tiny_synth();
  const LabeledSet a = synth_generate(cfg);
  const LabeledSet b = synth_generate(cfg);
  CHECK(a.size() == cfg.classes * cfg.per_class);
  CHECK(a.images == b.images);
  CHECK(a.labels[0] == 0);
  CHECK(a.labels[1] == 1);
  for (const auto& im : a.images) {
    for (double v : im.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  for (std::size_t i = 0; i < cfg.classes; ++i) {
    for (std::size_t j = i + 1; j < cfg.classes; ++j) {
      CHECK(l2_distance(synth_template(cfg, i), synth_template(cfg, j)) >= 10 * cfg.noise);
    }
  }
  SynthConfig noisy = cfg;
  noisy.noise = 5.0;
  CHECK_THROWS_AS(synth_generate(noisy), Error);
}

TEST_CASE("splits partition the set") {
  const LabeledSet data = synth_generate(fixture::tiny_synth());
  const DataSplits s = split(data, {}, 4);
  std::multiset<std::size_t> ids;
  for (const auto* part : {&s.model_train, &s.reference, &s.detector_train, &s.eval}) {
    for (std::size_t i = 0; i < part->size(); ++i) {
      ids.insert(part->ids[i]);
      CHECK(part->images[i] == data.images[part->ids[i]]);
      CHECK(part->labels[i] == data.labels[part->ids[i]]);
    }
  }
  CHECK(ids.size() == data.size());
  CHECK(std::set<std::size_t>(ids.begin(), ids.end()).size() == data.size());
  CHECK(s.model_train.size() == 64);

  const DataSplits again = split(data, {}, 4);
  CHECK(again.eval.ids == s.eval.ids);
  CHECK(split(data, {}, 5).eval.ids != s.eval.ids);

  CHECK_THROWS_AS(split(data, {0.5, 0.2, 0.2, 0.2}, 1), Error);
  CHECK_THROWS_AS(split(data, {-0.1, 0.5, 0.4, 0.2}, 1), Error);

  const std::string csv = splits_csv(s);
  CHECK(csv.rfind("index,split,label\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(data.size() + 1));
}
