#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef BESTRQ_CLI_PATH
#error "BESTRQ_CLI_PATH must be defined by the build"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string stdout_text;
};

RunResult run_cli(const std::string& args) {
  fs::path tmp = fs::temp_directory_path() / "bestrq_cli_stdout.txt";
  const std::string cmd = std::string(BESTRQ_CLI_PATH) + " " + args + " > " + tmp.string() + " 2>/dev/null";
  const int raw = std::system(cmd.c_str());
  RunResult res;
  res.exit_code = WEXITSTATUS(raw);
  std::ifstream is(tmp);
  res.stdout_text.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  return res;
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("bestrq_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("synth creates a corpus directory and exits zero", "[cli]") {
  auto dir = temp_dir("synth");
  auto res = run_cli("synth --count 4 --seed 9 --out " + (dir / "corpus").string());
  CHECK(res.exit_code == 0);
  CHECK(fs::exists(dir / "corpus" / "transcripts.jsonl"));
  CHECK(fs::exists(dir / "corpus" / "features"));
  CHECK(fs::exists(dir / "corpus" / "resolved_config.json"));
}

TEST_CASE("latency self-comparison prints zero", "[cli]") {
  auto dir = temp_dir("latency");
  {
    std::ofstream os(dir / "hyp.jsonl");
    os << R"({"id": "u1", "words": [{"w": "hi", "s": 10, "e": 120}, {"w": "there", "s": 130, "e": 400}]})"
       << "\n";
  }
  auto res = run_cli("latency --base " + (dir / "hyp.jsonl").string() + " --comp " +
                     (dir / "hyp.jsonl").string());
  CHECK(res.exit_code == 0);
  CHECK(res.stdout_text.find("\"relative_latency_ms\":0.0") != std::string::npos);
  CHECK(res.stdout_text.find("\"matched_words\":2") != std::string::npos);
}

TEST_CASE("unknown flag exits 2 with usage", "[cli]") {
  auto res = run_cli("synth --does-not-exist 1");
  CHECK(res.exit_code == 2);
}

TEST_CASE("unknown subcommand exits 2", "[cli]") {
  auto res = run_cli("frobnicate");
  CHECK(res.exit_code == 2);
}

TEST_CASE("invalid config key is rejected with code 3", "[cli]") {
  auto dir = temp_dir("badcfg");
  {
    std::ofstream os(dir / "cfg.json");
    os << R"({"task": {"no_such_field": 1}})";
  }
  auto res = run_cli("synth --config " + (dir / "cfg.json").string() + " --out " +
                     (dir / "corpus").string());
  CHECK(res.exit_code == 3);
}

TEST_CASE("missing corpus path exits 4", "[cli]") {
  auto res = run_cli("stats --corpus /nonexistent/place");
  CHECK(res.exit_code == 4);
}

TEST_CASE("stats reports per-dimension moments", "[cli]") {
  auto dir = temp_dir("stats");
  REQUIRE(run_cli("synth --count 4 --seed 3 --out " + (dir / "corpus").string()).exit_code == 0);
  auto res = run_cli("stats --corpus " + (dir / "corpus").string() + " --out " + dir.string());
  CHECK(res.exit_code == 0);
  CHECK(res.stdout_text.find("\"mean\"") != std::string::npos);
  CHECK(fs::exists(dir / "stats.json"));
}

TEST_CASE("quantize and probe-codebook run on a synth corpus", "[cli]") {
  auto dir = temp_dir("quant");
  REQUIRE(run_cli("synth --count 4 --seed 5 --out " + (dir / "corpus").string()).exit_code == 0);
  auto res = run_cli("quantize --corpus " + (dir / "corpus").string() + " --out " +
                     (dir / "labels").string());
  CHECK(res.exit_code == 0);
  CHECK(fs::exists(dir / "labels" / "labels.jsonl"));
  auto probe = run_cli("probe-codebook --corpus " + (dir / "corpus").string());
  CHECK(probe.exit_code == 0);
  CHECK(probe.stdout_text.find("normalized_entropy") != std::string::npos);
}

TEST_CASE("pretrain runs a tiny configured job and leaves reproducible outputs", "[cli]") {
  auto dir = temp_dir("pretrain");
  REQUIRE(run_cli("synth --count 8 --seed 6 --out " + (dir / "corpus").string()).exit_code == 0);
  {
    std::ofstream os(dir / "cfg.json");
    os << R"({
      "corpus": ")" << (dir / "corpus").string() << R"(",
      "quantizer": {"code_dim": 8, "vocab_size": 32, "seed": 5},
      "mask_span_frames": 12, "mask_start_prob": 0.02,
      "encoder": {"num_layers": 1, "d_model": 16, "num_heads": 2, "ffn_dim": 32,
                   "input_dim": 80, "vocab_size": 32},
      "schedule": {"peak_lr": 0.002, "warmup_steps": 50},
      "batch_size": 4, "total_steps": 6, "run_seed": 11, "metrics_every": 2
    })";
  }
  auto res1 = run_cli("pretrain --config " + (dir / "cfg.json").string() + " --out " +
                      (dir / "run1").string());
  REQUIRE(res1.exit_code == 0);
  CHECK(fs::exists(dir / "run1" / "metrics.csv"));
  CHECK(fs::exists(dir / "run1" / "checkpoint_final.ckpt"));
  CHECK(fs::exists(dir / "run1" / "resolved_config.json"));
  auto res2 = run_cli("pretrain --config " + (dir / "cfg.json").string() + " --out " +
                      (dir / "run2").string());
  REQUIRE(res2.exit_code == 0);
  CHECK(read_file(dir / "run1" / "metrics.csv") == read_file(dir / "run2" / "metrics.csv"));
  CHECK(read_file(dir / "run1" / "checkpoint_final.ckpt") ==
        read_file(dir / "run2" / "checkpoint_final.ckpt"));
}

TEST_CASE("grad-check subcommand passes at the spec tolerance", "[cli]") {
  auto res = run_cli("grad-check");
  CHECK(res.exit_code == 0);
  CHECK(res.stdout_text.find("\"pass\":true") != std::string::npos);
}

TEST_CASE("resolved config alone reproduces a pretrain run", "[cli]") {
  auto dir = temp_dir("resolved");
  REQUIRE(run_cli("synth --count 8 --seed 6 --out " + (dir / "corpus").string()).exit_code == 0);
  {
    std::ofstream os(dir / "cfg.json");
    os << R"({
      "corpus": ")" << (dir / "corpus").string() << R"(",
      "quantizer": {"code_dim": 8, "vocab_size": 32, "seed": 5},
      "mask_span_frames": 12, "mask_start_prob": 0.02,
      "encoder": {"num_layers": 1, "d_model": 16, "num_heads": 2, "ffn_dim": 32,
                   "input_dim": 80, "vocab_size": 32},
      "schedule": {"peak_lr": 0.002, "warmup_steps": 50},
      "batch_size": 4, "total_steps": 5, "run_seed": 31, "metrics_every": 2
    })";
  }
  REQUIRE(run_cli("pretrain --config " + (dir / "cfg.json").string() + " --out " +
                  (dir / "orig").string())
              .exit_code == 0);
  // replay from the snapshot the run left behind
  REQUIRE(run_cli("pretrain --config " + (dir / "orig" / "resolved_config.json").string() +
                  " --out " + (dir / "replay").string())
              .exit_code == 0);
  CHECK(read_file(dir / "orig" / "metrics.csv") == read_file(dir / "replay" / "metrics.csv"));
  CHECK(read_file(dir / "orig" / "checkpoint_final.ckpt") ==
        read_file(dir / "replay" / "checkpoint_final.ckpt"));
}

TEST_CASE("BESTRQ_OUT provides the default output root", "[cli]") {
  auto dir = temp_dir("envroot");
  fs::path tmp = fs::temp_directory_path() / "bestrq_cli_stdout_env.txt";
  const std::string cmd = "BESTRQ_OUT=" + dir.string() + " " + std::string(BESTRQ_CLI_PATH) +
                          " synth --count 2 --seed 3 > " + tmp.string() + " 2>/dev/null";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  CHECK(fs::exists(dir / "synth" / "transcripts.jsonl"));
}
