#include <gtest/gtest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dfa/checkpoint.hpp"
#include "dfa/config.hpp"
#include "dfa/dataset.hpp"
#include "dfa/metrics.hpp"
#include "dfa/report.hpp"
#include "support/test_data.hpp"

using namespace dfa;

namespace {

std::string tmp_path(const std::string& name) {
  const std::string p = testing::TempDir() + "/" + name;
  std::filesystem::remove_all(p);
  return p;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

std::string read_file_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(ParseFraction, RationalsAndDecimals) {
  EXPECT_EQ(parse_fraction("4/255"), 4.0 / 255.0);
  EXPECT_EQ(parse_fraction("8/255"), 8.0 / 255.0);
  EXPECT_EQ(parse_fraction("0.5"), 0.5);
  EXPECT_EQ(parse_fraction("2"), 2.0);
  EXPECT_THROW(parse_fraction("1/0"), ConfigError);
  EXPECT_THROW(parse_fraction("a/b"), ConfigError);
  EXPECT_THROW(parse_fraction("1.5x"), ConfigError);
  EXPECT_THROW(parse_fraction(""), ConfigError);
}

TEST(ConfigHash, OrderInsensitiveAndValueSensitive) {
  const std::string a = config_hash({{"alpha", "1"}, {"sigma", "0.05"}});
  const std::string b = config_hash({{"sigma", "0.05"}, {"alpha", "1"}});
  const std::string c = config_hash({{"alpha", "2"}, {"sigma", "0.05"}});
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a.size(), 16u);
}

// --------------------------------------------------------------------------
// IDX
// --------------------------------------------------------------------------

namespace {

void write_idx_pair(const std::string& images, const std::string& labels_path,
                    std::size_t n, std::size_t h, std::size_t w) {
  std::vector<unsigned char> img;
  push_be32(img, 0x00000803);
  push_be32(img, static_cast<std::uint32_t>(n));
  push_be32(img, static_cast<std::uint32_t>(h));
  push_be32(img, static_cast<std::uint32_t>(w));
  for (std::size_t i = 0; i < n * h * w; ++i) img.push_back(static_cast<unsigned char>(i % 256));
  write_bytes(images, img);

  std::vector<unsigned char> lab;
  push_be32(lab, 0x00000801);
  push_be32(lab, static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < n; ++i) lab.push_back(static_cast<unsigned char>(i % 3));
  write_bytes(labels_path, lab);
}

}  // namespace

TEST(IdxLoader, ReadsImagesAndLabels) {
  const std::string img = tmp_path("t-images-idx3-ubyte");
  const std::string lab = tmp_path("t-labels-idx1-ubyte");
  write_idx_pair(img, lab, 4, 3, 2);
  const Dataset ds = load_dataset(img, DataFormat::idx, lab);
  EXPECT_EQ(ds.n, 4u);
  EXPECT_EQ(ds.height, 3u);
  EXPECT_EQ(ds.width, 2u);
  EXPECT_EQ(ds.channels, 1u);
  EXPECT_EQ(ds.labels[2], 2);
  EXPECT_DOUBLE_EQ(ds.pixels[1], 1.0 / 255.0);
  // labels path derivation from the standard naming convention
  const Dataset ds2 = load_dataset(img, DataFormat::idx);
  EXPECT_EQ(ds2.n, 4u);
}

TEST(IdxLoader, BadMagicRejected) {
  const std::string img = tmp_path("bad-images-idx3-ubyte");
  const std::string lab = tmp_path("bad-labels-idx1-ubyte");
  write_idx_pair(img, lab, 2, 2, 2);
  std::vector<unsigned char> broken;
  push_be32(broken, 0x00000802);
  write_bytes(img, broken);
  EXPECT_THROW(load_dataset(img, DataFormat::idx, lab), FormatError);
}

TEST(IdxLoader, TruncationRejectedWithOffset) {
  const std::string img = tmp_path("tr-images-idx3-ubyte");
  const std::string lab = tmp_path("tr-labels-idx1-ubyte");
  write_idx_pair(img, lab, 4, 3, 2);
  // chop the last 5 pixel bytes
  auto bytes = io::read_file(img);
  bytes.resize(bytes.size() - 5);
  write_bytes(img, bytes);
  try {
    load_dataset(img, DataFormat::idx, lab);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset, bytes.size());
  }
}

// --------------------------------------------------------------------------
// CIFAR binary
// --------------------------------------------------------------------------

TEST(CifarLoader, ReadsRecords) {
  const std::string path = tmp_path("cifar.bin");
  std::vector<unsigned char> bytes;
  for (int rec = 0; rec < 3; ++rec) {
    bytes.push_back(static_cast<unsigned char>(rec + 1));
    for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>((rec + i) % 256));
  }
  write_bytes(path, bytes);
  const Dataset ds = load_dataset(path, DataFormat::cifar_binary);
  EXPECT_EQ(ds.n, 3u);
  EXPECT_EQ(ds.channels, 3u);
  EXPECT_EQ(ds.height, 32u);
  EXPECT_EQ(ds.n_classes, 10u);
  EXPECT_EQ(ds.labels[1], 2);
  EXPECT_DOUBLE_EQ(ds.pixels[0], 0.0);
}

TEST(CifarLoader, BadSizeRejected) {
  const std::string path = tmp_path("cifar_bad.bin");
  write_bytes(path, std::vector<unsigned char>(3072));  // one byte short of a record
  EXPECT_THROW(load_dataset(path, DataFormat::cifar_binary), FormatError);
}

TEST(CifarLoader, LabelByteOutOfRangeRejected) {
  const std::string path = tmp_path("cifar_lab.bin");
  std::vector<unsigned char> bytes(3073);
  bytes[0] = 11;
  write_bytes(path, bytes);
  EXPECT_THROW(load_dataset(path, DataFormat::cifar_binary), FormatError);
}

// --------------------------------------------------------------------------
// Raw-array
// --------------------------------------------------------------------------

TEST(RawArray, RoundTripsBitExactly) {
  const Dataset ds = make_synthetic(test::small_synth(81));
  const std::string path = tmp_path("synth.dfar");
  save_raw_array(ds, path);
  const Dataset back = load_dataset(path, DataFormat::raw_array);
  ASSERT_EQ(back.n, ds.n);
  ASSERT_EQ(back.n_classes, ds.n_classes);
  EXPECT_EQ(0, std::memcmp(back.pixels.data(), ds.pixels.data(), ds.pixels.size() * 8));
  EXPECT_EQ(back.labels, ds.labels);
}

TEST(RawArray, TruncationAndBadMagicRejected) {
  const Dataset ds = make_synthetic(test::small_synth(82));
  const std::string path = tmp_path("synth2.dfar");
  save_raw_array(ds, path);
  auto bytes = io::read_file(path);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 7);
  write_bytes(path, truncated);
  EXPECT_THROW(load_dataset(path, DataFormat::raw_array), FormatError);
  bytes[0] = 'X';
  write_bytes(path, bytes);
  EXPECT_THROW(load_dataset(path, DataFormat::raw_array), FormatError);
}

// --------------------------------------------------------------------------
// Synthetic datasets
// --------------------------------------------------------------------------

TEST(Synthetic, PixelsInRangeAndDeterministic) {
  const SynthSpec spec = test::small_synth(83);
  const Dataset a = make_synthetic(spec);
  const Dataset b = make_synthetic(spec);
  EXPECT_EQ(a.n, spec.n_classes * spec.per_class);
  for (double p : a.pixels) {
    ASSERT_GE(p, 0.0);
    ASSERT_LE(p, 1.0);
  }
  EXPECT_EQ(0, std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * 8));
  std::vector<std::size_t> counts(spec.n_classes, 0);
  for (int l : a.labels) counts[static_cast<std::size_t>(l)]++;
  for (auto c : counts) EXPECT_EQ(c, spec.per_class);
}

// --------------------------------------------------------------------------
// Metrics
// --------------------------------------------------------------------------

TEST(Metrics, AppendReadAndSequence) {
  const std::string path = tmp_path("metrics.jsonl");
  {
    MetricsWriter w(path, "hash1");
    w.append("epoch", {{"epoch", 1}, {"l_a", 0.25}});
    w.append("epoch", {{"epoch", 2}, {"l_a", 0.125}});
  }
  {
    MetricsWriter w(path, "hash1");  // re-open continues the sequence
    w.append("attack", {{"accuracy", 51.25}});
  }
  const auto records = read_metrics(path);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].ts, 0u);
  EXPECT_EQ(records[1].ts, 1u);
  EXPECT_EQ(records[2].ts, 2u);
  EXPECT_EQ(records[2].kind, "attack");
  EXPECT_EQ(records[0].config_hash, "hash1");
  EXPECT_EQ(records[1].data["l_a"].get<double>(), 0.125);
}

TEST(Metrics, IdenticalRunsProduceIdenticalBytes) {
  const std::string p1 = tmp_path("m1.jsonl");
  const std::string p2 = tmp_path("m2.jsonl");
  for (const auto& p : {p1, p2}) {
    MetricsWriter w(p, "feed");
    w.append("epoch", {{"epoch", 1}, {"l_a", 1.0 / 3.0}, {"clean_accuracy", 97.25}});
    w.append("ood", {{"best_f1", 0.9375}});
  }
  EXPECT_EQ(read_file_text(p1), read_file_text(p2));
}

TEST(Metrics, MalformedLineRejected) {
  const std::string path = tmp_path("bad.jsonl");
  std::ofstream(path) << "{not json}\n";
  EXPECT_THROW(read_metrics(path), DataError);
}

// --------------------------------------------------------------------------
// Checkpoints
// --------------------------------------------------------------------------

TEST(Checkpoint, RoundTripsBitExactly) {
  ModelSnapshot m = test::tiny_cnn_snapshot(4, 90);
  m.epoch = 7;
  m.config_hash = "deadbeefcafef00d";
  m.rng_state = Rng(12345).state();

  const std::string dir = tmp_path("ckpt");
  save_checkpoint(dir, m);
  const ModelSnapshot back = load_checkpoint(dir);

  EXPECT_EQ(back.epoch, 7);
  EXPECT_EQ(back.config_hash, m.config_hash);
  EXPECT_EQ(back.rng_state, m.rng_state);
  ASSERT_EQ(back.extractor.parameter_tensor_count(), m.extractor.parameter_tensor_count());
  for (std::size_t i = 0; i < m.extractor.parameter_tensor_count(); ++i) {
    const Tensor& a = m.extractor.parameter(i);
    const Tensor& b = back.extractor.parameter(i);
    ASSERT_EQ(a.shape(), b.shape());
    ASSERT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * 8));
  }
  ASSERT_EQ(0, std::memcmp(m.head.weights.data(), back.head.weights.data(),
                           m.head.weights.size() * 8));

  // evaluation outputs must be bit-identical through the round trip
  Rng rng(91);
  const Tensor x = rng.uniform_tensor({3, 1, 8, 8}, 0.0, 1.0);
  const Tensor va = embed_batch(m, x);
  const Tensor vb = embed_batch(back, x);
  EXPECT_EQ(0, std::memcmp(va.data(), vb.data(), va.size() * 8));
}

TEST(Checkpoint, MissingDirectoryRejected) {
  EXPECT_THROW(load_checkpoint(tmp_path("missing_ckpt")), FormatError);
}

// --------------------------------------------------------------------------
// Report
// --------------------------------------------------------------------------

TEST(Report, AttackTableAggregatesLikeThePublishedRow) {
  const std::string metrics = tmp_path("report_metrics.jsonl");
  MetricsWriter w(metrics, "777");
  for (double acc : {74.18, 32.12, 22.12, 81.39, 74.72})
    w.append("attack", {{"name", "a" + std::to_string(static_cast<int>(acc * 100))},
                        {"accuracy", acc}});
  const std::string out = tmp_path("report_out");
  generate_report(metrics, out);
  const std::string table = read_file_text(out + "/attacks.md");
  EXPECT_NE(table.find("56.91 +- 24.66"), std::string::npos) << table;
}

TEST(Report, SingleRecordHasZeroStd) {
  const std::string metrics = tmp_path("report_single.jsonl");
  MetricsWriter w(metrics, "778");
  w.append("attack", {{"name", "pgd-8"}, {"accuracy", 32.12}});
  const std::string out = tmp_path("report_single_out");
  generate_report(metrics, out);
  const std::string table = read_file_text(out + "/attacks.md");
  EXPECT_NE(table.find("32.12 +- 0.00"), std::string::npos) << table;
}

TEST(Report, EmptyMetricsSayNoData) {
  const std::string metrics = tmp_path("report_empty.jsonl");
  std::ofstream(metrics).close();
  const std::string out = tmp_path("report_empty_out");
  generate_report(metrics, out);
  EXPECT_NE(read_file_text(out + "/attacks.md").find("no data"), std::string::npos);
  EXPECT_NE(read_file_text(out + "/ood.md").find("no data"), std::string::npos);
}

TEST(Report, DeterministicBytes) {
  const std::string metrics = tmp_path("report_det.jsonl");
  MetricsWriter w(metrics, "779");
  w.append("attack", {{"name", "fgsm"}, {"accuracy", 74.18}, {"clean_accuracy", 96.8}});
  w.append("analysis",
           {{"per_class_std", std::vector<double>{0.5, 0.25}}, {"total_std", 0.4},
            {"lipschitz_mean", 0.125}, {"lipschitz_max", 0.5}});
  const std::string out1 = tmp_path("report_det1");
  const std::string out2 = tmp_path("report_det2");
  generate_report(metrics, out1);
  generate_report(metrics, out2);
  for (const char* f : {"/attacks.md", "/training.md", "/ood.md", "/analysis.md"})
    EXPECT_EQ(read_file_text(out1 + f), read_file_text(out2 + f)) << f;
  EXPECT_EQ(read_file_text(out1 + "/compactness_1.svg"), read_file_text(out2 + "/compactness_1.svg"));
}
