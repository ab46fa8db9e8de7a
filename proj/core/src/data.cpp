#include "agd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "agd/common.hpp"

namespace agd {

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::All: return "all";
    case SplitTag::ModelTrain: return "model-train";
    case SplitTag::Reference: return "reference";
    case SplitTag::DetectorTrain: return "detector-train";
    case SplitTag::Eval: return "eval";
  }
  return "?";
}

void LabeledSet::push_back(Tensor image, std::size_t label, std::size_t id) {
  images.push_back(std::move(image));
  labels.push_back(label);
  ids.push_back(id);
}

void LabeledSet::validate() const {
  require(images.size() == labels.size() && images.size() == ids.size(), ErrorKind::Data,
          "labeled set: images, labels and ids differ in length");
  require(class_count >= 2, ErrorKind::Data, "labeled set needs at least 2 classes");
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(labels[i] < class_count, ErrorKind::Data,
            "label " + std::to_string(labels[i]) + " out of range at example " +
                std::to_string(ids[i]));
    require(images[i].shape() == images.front().shape(), ErrorKind::Data,
            "inconsistent image shapes in labeled set");
    for (double v : images[i].values()) {
      require(v >= 0.0 && v <= 1.0, ErrorKind::Data,
              "pixel outside [0,1] at example " + std::to_string(ids[i]));
    }
  }
}

Tensor synth_template(const SynthConfig& config, std::size_t cls) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double classes = static_cast<double>(config.classes);
  const double theta1 = std::numbers::pi * static_cast<double>(cls) / classes;
  const double theta2 = theta1 + std::numbers::pi / 3.0 + static_cast<double>(cls);
  const double f1 = 1.0 + static_cast<double>(cls % 3) * 0.75;
  const double f2 = 1.5 + static_cast<double>((cls / 3) % 3) * 0.6;

  Tensor t({config.channels, config.height, config.width});
  for (std::size_t ch = 0; ch < config.channels; ++ch) {
    const double phase = two_pi * static_cast<double>((ch + 1) * (cls + 1)) /
                         (static_cast<double>(config.channels) + classes);
    for (std::size_t y = 0; y < config.height; ++y) {
      for (std::size_t x = 0; x < config.width; ++x) {
        const double u = static_cast<double>(x) / static_cast<double>(config.width);
        const double v = static_cast<double>(y) / static_cast<double>(config.height);
        const double a = std::sin(two_pi * f1 * (u * std::cos(theta1) + v * std::sin(theta1)) + phase);
        const double b = std::sin(two_pi * f2 * (u * std::cos(theta2) + v * std::sin(theta2)) - phase);
        t.at(ch, y, x) = std::clamp(0.5 + config.contrast * 0.5 * (a + b), 0.0, 1.0);
      }
    }
  }
  return t;
}

LabeledSet synth_generate(const SynthConfig& config) {
  require(config.classes >= 2, ErrorKind::Config, "synthetic data needs at least 2 classes");
  require(config.per_class >= 1, ErrorKind::Config, "per_class must be positive");
  require(config.noise >= 0.0, ErrorKind::Config, "noise sigma must be non-negative");
  require(config.channels >= 1 && config.height >= 1 && config.width >= 1, ErrorKind::Config,
          "image extents must be positive");

  std::vector<Tensor> templates;
  for (std::size_t c = 0; c < config.classes; ++c) templates.push_back(synth_template(config, c));
  for (std::size_t i = 0; i < templates.size(); ++i) {
    for (std::size_t j = i + 1; j < templates.size(); ++j) {
      const double d = l2_distance(templates[i], templates[j]);
      if (d < 10.0 * config.noise || d == 0.0) {
        fail(ErrorKind::Config, "templates " + std::to_string(i) + " and " +
                                    std::to_string(j) + " are only " + std::to_string(d) +
                                    " apart; need >= 10 * noise");
      }
    }
  }

  LabeledSet set;
  set.class_count = config.classes;
  RandomEngine rng(derive_seed(config.seed, stream_id("synth")));
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t total = config.classes * config.per_class;
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t cls = i % config.classes;
    Tensor image = templates[cls];
    if (config.noise > 0.0) {
      for (auto& v : image.values()) v += config.noise * noise(rng);
    }
    set.push_back(clipped(std::move(image)), cls, i);
  }
  return set;
}

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Data, "cannot open IDX file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) fail(ErrorKind::Data, path.string() + ": truncated IDX header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

LabeledSet load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path) {
  const auto img = slurp(images_path);
  const auto lab = slurp(labels_path);

  const auto img_magic = read_be32(img, 0, images_path);
  if (img_magic != 0x00000803) {
    std::ostringstream msg;
    msg << images_path.string() << ": bad IDX image magic 0x" << std::hex << img_magic;
    fail(ErrorKind::Data, msg.str());
  }
  const auto lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801) {
    std::ostringstream msg;
    msg << labels_path.string() << ": bad IDX label magic 0x" << std::hex << lab_magic;
    fail(ErrorKind::Data, msg.str());
  }

  const std::size_t count = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  if (count != label_count) {
    fail(ErrorKind::Data, "IDX count mismatch: " + std::to_string(count) + " images vs " +
                              std::to_string(label_count) + " labels");
  }
  require(rows > 0 && cols > 0, ErrorKind::Data, images_path.string() + ": zero image extent");
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + count * pixels) {
    fail(ErrorKind::Data, images_path.string() + ": truncated, expected " +
                              std::to_string(16 + count * pixels) + " bytes, found " +
                              std::to_string(img.size()));
  }
  if (lab.size() < 8 + count) {
    fail(ErrorKind::Data, labels_path.string() + ": truncated, expected " +
                              std::to_string(8 + count) + " bytes, found " +
                              std::to_string(lab.size()));
  }

  LabeledSet set;
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    Tensor image({1, rows, cols});
    for (std::size_t p = 0; p < pixels; ++p) image[p] = img[16 + i * pixels + p] / 255.0;
    const std::size_t label = lab[8 + i];
    max_label = std::max(max_label, label);
    set.push_back(std::move(image), label, i);
  }
  set.class_count = std::max<std::size_t>(2, max_label + 1);
  return set;
}

void validate(const SplitFractions& fractions) {
  const std::array<double, 4> f{fractions.model_train, fractions.reference,
                                fractions.detector_train, fractions.eval};
  for (double v : f) require(v >= 0.0, ErrorKind::Config, "split fractions must be >= 0");
  const double total = f[0] + f[1] + f[2] + f[3];
  if (std::abs(total - 1.0) > 1e-9) {
    fail(ErrorKind::Config, "split fractions sum to " + std::to_string(total) + ", expected 1");
  }
}

DataSplits split(const LabeledSet& set, const SplitFractions& fractions, std::uint64_t seed) {
  validate(fractions);
  const std::array<double, 4> f{fractions.model_train, fractions.reference,
                                fractions.detector_train, fractions.eval};

  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  RandomEngine rng(derive_seed(seed, stream_id("split")));
  std::shuffle(order.begin(), order.end(), rng);

  DataSplits out;
  std::array<LabeledSet*, 4> parts{&out.model_train, &out.reference, &out.detector_train,
                                   &out.eval};
  const std::array<SplitTag, 4> tags{SplitTag::ModelTrain, SplitTag::Reference,
                                     SplitTag::DetectorTrain, SplitTag::Eval};
  const double n = static_cast<double>(set.size());
  double cumulative = 0.0;
  std::size_t begin = 0;
  for (std::size_t p = 0; p < 4; ++p) {
    cumulative += f[p];
    const std::size_t end =
        p == 3 ? set.size() : std::min(set.size(), static_cast<std::size_t>(std::llround(cumulative * n)));
    parts[p]->class_count = set.class_count;
    parts[p]->split = tags[p];
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t src = order[i];
      parts[p]->push_back(set.images[src], set.labels[src], set.ids[src]);
    }
    begin = std::max(begin, end);
  }
  return out;
}

std::string splits_csv(const DataSplits& splits) {
  struct Row {
    std::size_t id;
    SplitTag tag;
    std::size_t label;
  };
  std::vector<Row> rows;
  for (const LabeledSet* part :
       {&splits.model_train, &splits.reference, &splits.detector_train, &splits.eval}) {
    for (std::size_t i = 0; i < part->size(); ++i)
      rows.push_back({part->ids[i], part->split, part->labels[i]});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });
  std::ostringstream out;
  out << "index,split,label\n";
  for (const auto& r : rows) out << r.id << ',' << to_string(r.tag) << ',' << r.label << '\n';
  return out.str();
}

}  // namespace agd
