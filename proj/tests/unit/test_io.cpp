#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "../../core/src/binary_io.hpp"
#include "helpers.hpp"
#include "puregen/config.hpp"
#include "puregen/dataset_io.hpp"
#include "puregen/manifest.hpp"
#include "puregen/run.hpp"
#include "puregen/synthetic.hpp"

using namespace puregen;

namespace {

void write_bytes(const std::string& path, const std::vector<char>& bytes) { detail::write_file(path, bytes); }

io::RunConfig tiny_config(const std::string& out) {
  io::KeyValues kv = io::KeyValues::parse(R"(
seed = 7
data.per_class = 8
data.test_per_class = 4
data.generative_per_class = 8
ebm.steps = 4
ebm.batch = 8
ebm.langevin_steps = 3
ddpm.epochs = 1
ddpm.batch = 8
classifier.epochs = 1
purify.ebm_steps = 3
diagnose.samples = 2
diagnose.lyapunov_steps = 20
diagnose.eta_grid = 0.5, 2
)");
  kv.set("out", out);
  kv.set("workers", "2");
  return io::parse_run_config(kv);
}

}  // namespace

TEST(Pgtn, RoundTripIsBitwise) {
  test::TempDir dir("pgtn");
  Dataset d = test::random_dataset(11, {3, 4, 5}, 4, 1);
  d.name = "sample";
  io::save_dataset(d, dir / "sample.pgtn");
  EXPECT_EQ(io::load_dataset(dir / "sample.pgtn"), d);
  io::save_dataset(io::load_dataset(dir / "sample.pgtn"), dir / "again.pgtn");
  EXPECT_EQ(detail::read_file(dir / "sample.pgtn"), detail::read_file(dir / "again.pgtn"));
}

TEST(Pgtn, HeaderAndSize) {
  const Dataset d = test::random_dataset(6, {2, 3, 4}, 3, 1);
  const auto bytes = io::encode_dataset(d);
  EXPECT_EQ(bytes.size(), 28u + 4u * 6 * 2 * 3 * 4 + 6);
  detail::ByteReader r(bytes, "t");
  EXPECT_EQ(r.bytes(4), "PGTN");
  EXPECT_EQ(r.u32(), 1u);
  EXPECT_EQ(r.u32(), 6u);
  EXPECT_EQ(r.u32(), 2u);
  EXPECT_EQ(r.u32(), 3u);
  EXPECT_EQ(r.u32(), 4u);
  EXPECT_EQ(r.u32(), 3u);
}

TEST(Pgtn, Errors) {
  test::TempDir dir("pgtn_err");
  write_bytes(dir / "empty.pgtn", {});
  try {
    io::load_dataset(dir / "empty.pgtn");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos);
  }
  const Dataset d = test::random_dataset(3, {1, 2, 2}, 2, 1);
  auto bytes = io::encode_dataset(d);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(io::decode_dataset(truncated), DataError);
  auto bad = bytes;
  bad[0] = 'Q';
  EXPECT_THROW(io::decode_dataset(bad), DataError);
  auto label = bytes;
  label.back() = 2;  // class_count is 2
  EXPECT_THROW(io::decode_dataset(label), DataError);
  auto range = bytes;
  const float big = 1.5f;
  std::memcpy(range.data() + 28, &big, 4);
  EXPECT_THROW(io::decode_dataset(range), DataError);
  write_bytes(dir / "junk.bin", {'a', 'b', 'c', 'd', 'e'});
  EXPECT_THROW(io::load_dataset(dir / "junk.bin"), DataError);
  EXPECT_THROW(io::load_dataset(dir / "missing.pgtn"), DataError);
}

TEST(Cifar, SingleRecordFixture) {
  test::TempDir dir("cifar");
  std::vector<char> rec(3073, static_cast<char>(255));
  rec[0] = 7;
  write_bytes(dir / "data_batch_1.bin", rec);
  const Dataset d = io::load_dataset(dir / "data_batch_1.bin");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 7);
  EXPECT_EQ(d.class_count, 10);
  EXPECT_EQ(d.image_shape, (Shape{3, 32, 32}));
  for (float v : d.images[0].data()) EXPECT_EQ(v, 1.0f);
  rec[0] = 10;
  EXPECT_THROW(io::decode_cifar10(rec), DataError);
  rec.pop_back();
  EXPECT_THROW(io::decode_cifar10(rec), DataError);
}

TEST(Manifest, HashesAndTamperDetection) {
  EXPECT_EQ(io::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  test::TempDir dir("manifest");
  std::filesystem::create_directories(dir / "sub");
  write_bytes(dir / "a.txt", {'x'});
  write_bytes(dir / "sub/b.txt", {'y', 'z'});
  const auto m = io::scan_directory(dir.str());
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[1].path, "sub/b.txt");
  io::write_manifest(dir.str(), m);
  EXPECT_EQ(io::read_manifest(dir.str()), m);
  EXPECT_EQ(io::read_manifest(dir.str()).created, m.created);
  EXPECT_TRUE(io::verify_manifest(dir.str()).empty());
  write_bytes(dir / "a.txt", {'w'});
  write_bytes(dir / "c.txt", {'c'});
  std::filesystem::remove(dir / "sub/b.txt");
  const auto problems = io::verify_manifest(dir.str());
  EXPECT_EQ(problems, (std::vector<std::string>{"modified: a.txt", "missing: sub/b.txt", "unlisted: c.txt"}));
}

TEST(KeyValues, ParsesFlatText) {
  const auto kv = io::KeyValues::parse("# comment\nseed = 3\n a.b =  x, y ,z  # trailing\n\nn = 8/255\n");
  EXPECT_EQ(kv.get_u64("seed", 0), 3u);
  EXPECT_EQ(kv.get_list("a.b", {}), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_DOUBLE_EQ(kv.get_double("n", 0), 8.0 / 255.0);
  EXPECT_EQ(kv.get_int("missing", 5), 5);
  EXPECT_TRUE(kv.unused().empty());
  EXPECT_THROW(io::KeyValues::parse("novalue\n"), ConfigError);
  EXPECT_THROW(io::KeyValues::parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(io::KeyValues::parse("a = x").get_int("a", 0), ConfigError);
  EXPECT_THROW(io::KeyValues::parse("a = maybe").get_bool("a", false), ConfigError);
}

TEST(RunConfig, SeedMandatoryAndUnknownKeys) {
  EXPECT_THROW(io::parse_run_config(io::KeyValues::parse("out = x\n")).validate(), ConfigError);
  EXPECT_THROW(io::parse_run_config(io::KeyValues::parse("seed = 1\nebm.stepz = 3\n")), ConfigError);
  EXPECT_THROW(io::parse_run_config(io::KeyValues::parse("seed = 1\nstages = purify, bake\n")).validate(), ConfigError);
  EXPECT_THROW(io::parse_run_config(io::KeyValues::parse("seed = 1\npoison.kind = sneaky\n")), ConfigError);
  auto c = io::parse_run_config(io::KeyValues::parse("seed = 1\nout = a\ndata.source = file\n"
                                                      "data.train_path = a\ndata.test_path = b\n"));
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, FormatRoundTrips) {
  auto c = io::parse_run_config(io::KeyValues::parse("seed = 42\npoison.xi = 8/255\npurify.k = 0.5\n"
                                                      "ebm.optimizer = sgd\ndiagnose.eta_grid = 0.1, 3\n"));
  const std::string text = io::format_run_config(c);
  const auto again = io::parse_run_config(io::KeyValues::parse(text));
  EXPECT_EQ(io::format_run_config(again), text);
  EXPECT_EQ(again.seed, 42u);
  EXPECT_FLOAT_EQ(again.poison.xi, 8.0f / 255.0f);
  EXPECT_EQ(again.ebm.train.optimizer, OptimizerKind::kSgd);
  EXPECT_EQ(again.diagnose.eta_grid, (std::vector<double>{0.1, 3.0}));
  EXPECT_EQ(io::format_run_config(c, false).find("workers"), std::string::npos);
}

TEST(Run, IdentityPurifyKeepsDatasetHash) {
  test::TempDir dir("run_identity");
  auto c = tiny_config(dir.str());
  c.stages = {"make-data", "purify"};
  c.purify.ebm_steps = 0;
  c.purify.ddpm_steps = 0;
  c.purify.k = 0.0;
  const auto r = io::run(c);
  EXPECT_EQ(r.stages, c.stages);
  std::map<std::string, std::string> hash;
  for (const auto& e : r.manifest.entries) hash[e.path] = e.sha256;
  ASSERT_TRUE(hash.contains(io::artifacts::kPurified));
  EXPECT_EQ(hash[io::artifacts::kPurified], hash[io::artifacts::kTrain]);
}

TEST(Run, FullPipelineIsDeterministic) {
  test::TempDir a("run_a"), b("run_b");
  auto ca = tiny_config(a.str());
  auto cb = tiny_config(b.str());
  cb.workers = 1;
  const auto ra = io::run(ca);
  const auto rb = io::run(cb);
  EXPECT_EQ(ra.stages, io::kAllStages);
  EXPECT_EQ(ra.manifest, rb.manifest);
  EXPECT_EQ(ra.metrics, rb.metrics);
  EXPECT_TRUE(ra.metrics.contains("defended.psr"));
  EXPECT_TRUE(io::verify_manifest(a.str()).empty());
  EXPECT_GE(ra.manifest.entries.size(), 20u);
}

TEST(Run, StagesResumeFromDirectory) {
  test::TempDir dir("run_resume");
  auto c = tiny_config(dir.str());
  c.stages = {"make-data", "poison"};
  io::run(c);
  c.stages = {"train-cls", "eval"};
  const auto r = io::run(c);
  EXPECT_TRUE(r.metrics.contains("undefended.natural_accuracy"));
  EXPECT_FALSE(r.metrics.contains("defended.psr"));
}

TEST(Run, StageErrorsNameTheStage) {
  test::TempDir dir("run_error");
  auto c = tiny_config(dir.str());
  c.stages = {"eval"};
  try {
    io::run(c);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("stage eval: ", 0), 0u) << e.what();
  }
  // The manifest is still written for what exists.
  EXPECT_TRUE(std::filesystem::exists(dir / io::kManifestName));
}

TEST(Run, FileSourceAcceptsCifarBatches) {
  test::TempDir dir("run_cifar");
  std::vector<char> batch;
  for (int i = 0; i < 20; ++i) {
    std::vector<char> rec(3073, static_cast<char>(i * 10));
    rec[0] = static_cast<char>(i % 10);
    batch.insert(batch.end(), rec.begin(), rec.end());
  }
  write_bytes(dir / "train.bin", batch);
  write_bytes(dir / "test.bin", batch);
  auto c = tiny_config(dir / "out");
  c.data.source = "file";
  c.data.train_path = dir / "train.bin";
  c.data.test_path = dir / "test.bin";
  c.stages = {"make-data"};
  io::run(c);
  const Dataset d = io::load_dataset(dir / "out/data/train.pgtn");
  EXPECT_EQ(d.size(), 20u);
  EXPECT_EQ(d.image_shape, (Shape{3, 32, 32}));
}
