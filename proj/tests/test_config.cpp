#include <doctest.h>

#include <cstdlib>

#include "cascade/augment.hpp"
#include "cascade/config.hpp"
#include "helpers.hpp"

using namespace cascade;
using testing::kind_of;
using testing::TempDir;

TEST_CASE("run config parsing") {
    TempDir dir;
    const auto cfg = RunConfig::parse(R"(
task = "nli"
[dataset]
dir = "data"
[slices]
t_head = 50
t_tail = 5
[run]
seed = 9
tau = 0.7
jobs = 2
partition_mode = "conjunctive"
[calibration]
grid = [0.5, 0.9]
lm_budget = 0.3
[[backend]]
id = "s"
kind = "offline"
predictions = "preds/s.jsonl"
[backend.cost]
latency_ms_per_call = 2.5
[[backend]]
id = "lm"
kind = "http"
layer = "large"
url = "https://example.invalid/v1/chat/completions"
model = "m"
template = "Pick one of {labels}: {input}"
logprobs = true
[[backend]]
id = "sub"
kind = "subprocess"
layer = "augmented"
command = ["python3", "serve.py"]
[[backend]]
id = "syn"
kind = "synthetic"
covered_regions = [0, 2]
in_region_accuracy = 0.9
out_region_accuracy = 0.4
)",
                                      dir.path());
    CHECK(cfg.task == "nli");
    CHECK(cfg.dataset_dir == dir / "data");
    CHECK(cfg.slices->t_head == 50);
    CHECK(cfg.seed == 9);
    CHECK(cfg.tau == 0.7);
    CHECK(cfg.jobs == 2);
    CHECK(cfg.partition_mode == PartitionMode::Conjunctive);
    CHECK(cfg.grid == std::vector<double>{0.5, 0.9});
    CHECK(cfg.lm_budget == 0.3);
    REQUIRE(cfg.backends.size() == 4);
    CHECK(std::get<OfflineConfig>(cfg.backends[0].descriptor.config).predictions == dir / "preds/s.jsonl");
    CHECK(cfg.backends[0].descriptor.cost.latency_ms_per_call == 2.5);
    CHECK(cfg.backends[1].descriptor.layer == Layer::Large);
    CHECK_FALSE(cfg.backends[1].descriptor.opaque_confidence);
    CHECK(std::get<SubprocessConfig>(cfg.backends[2].descriptor.config).command.size() == 2);
    CHECK(std::get<SyntheticConfig>(cfg.backends[3].descriptor.config).profile.covered_regions == std::set<int>{0, 2});
}

TEST_CASE("config defaults and rejections") {
    TempDir dir;
    unsetenv("EA_CACHE_DIR");
    const auto c = RunConfig::parse("[dataset]\n", dir.path());
    CHECK(c.grid.size() == 11);
    CHECK(c.output_dir == dir / "out");
    CHECK(c.cache_dir == dir / "cache");
    setenv("EA_CACHE_DIR", "/tmp/elsewhere", 1);
    CHECK(RunConfig::parse("[dataset]\n", dir.path()).cache_dir == "/tmp/elsewhere");
    unsetenv("EA_CACHE_DIR");

    CHECK(kind_of([&] { RunConfig::parse("", dir.path()); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { RunConfig::parse("[dataset]\nbogus = 1\n", dir.path()); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { RunConfig::parse("[dataset]\n[run]\ntau = 2.0\n", dir.path()); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { RunConfig::parse("[dataset]\n[slices]\nt_head = 1\nt_tail = 3\n", dir.path()); }) ==
          ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { RunConfig::parse("[dataset]\n[[backend]]\nid = \"x\"\nkind = \"carrier-pigeon\"\n", dir.path()); }) ==
          ErrorKind::InvalidConfig);
    CHECK(kind_of([&] {
              RunConfig::parse("[dataset]\n[[backend]]\nid = \"x\"\nkind = \"http\"\nurl = \"http://h/\"\nmodel = \"m\"\n"
                               "template = \"no placeholders\"\n",
                               dir.path());
          }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { RunConfig::parse("this is = = not toml", dir.path()); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("build_registry checks augmented provenance") {
    TempDir dir;
    auto b = testing::bundle_of({"x", "y"}, {testing::example("a", 0), testing::example("b", 1)});
    save_dataset(b, dir / "data", DatasetSchema::standard());
    PartitionResult p;
    p.underfitted_ids = {"a"};
    p.fitted_ids = {"b"};
    p.ssm_error_ids = {"a"};
    p.lm_error_ids = {"a"};
    const auto m = build_training_manifest(p, b, ManifestVariant::Ea, "t", "ph");
    write_file(dir / "m.jsonl", m.serialize());
    write_file(dir / "assm.jsonl", "{\"backend_id\":\"assm\",\"example_id\":\"a\",\"probs\":[0.9,0.1]}\n{\"backend_id\":\"assm\",\"example_id\":\"b\",\"probs\":[0.2,0.8]}\n");

    const std::string base = "[dataset]\ndir = \"data\"\n[[backend]]\nid = \"assm\"\nkind = \"offline\"\nlayer = \"augmented\"\n"
                             "predictions = \"assm.jsonl\"\nmanifest = \"m.jsonl\"\n";
    const auto good = RunConfig::parse(base + "provenance = \"" + m.provenance_hash() + "\"\n", dir.path());
    const auto reg = good.build_registry(good.load_bundle());
    CHECK(reg.get("assm").descriptor().provenance == m.provenance_hash());

    const auto stale = RunConfig::parse(base + "provenance = \"deadbeef\"\n", dir.path());
    CHECK(kind_of([&] { stale.build_registry(stale.load_bundle()); }) == ErrorKind::ProvenanceMismatch);
    const auto half = RunConfig::parse(base, dir.path());
    CHECK(kind_of([&] { half.build_registry(half.load_bundle()); }) == ErrorKind::InvalidConfig);
}
