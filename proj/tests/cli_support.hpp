#pragma once

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "utrcaf/checkpoint.hpp"
#include "utrcaf/io.hpp"
#include "utrcaf/synth.hpp"
#include "utrcaf/utr.hpp"

namespace utrcaf::testing {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

inline pid_t spawn_cli(const std::vector<std::string>& args, const fs::path& cwd,
                       const std::vector<std::pair<std::string, std::string>>& env,
                       const fs::path& out_file, const fs::path& err_file) {
  const pid_t pid = fork();
  if (pid != 0) return pid;
  if (chdir(cwd.c_str()) != 0) _exit(127);
  const int out = open(out_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  const int err = open(err_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (out < 0 || err < 0) _exit(127);
  dup2(out, STDOUT_FILENO);
  dup2(err, STDERR_FILENO);
  for (const auto& [k, v] : env) setenv(k.c_str(), v.c_str(), 1);
  std::vector<char*> argv;
  std::string exe = UTRCAF_CLI_PATH;
  argv.push_back(exe.data());
  std::vector<std::string> copy = args;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);
  execv(exe.c_str(), argv.data());
  _exit(127);
}

// Runs the CLI in `cwd`, capturing stdout and stderr.
inline CliResult run_cli(const std::vector<std::string>& args, const fs::path& cwd,
                         const std::vector<std::pair<std::string, std::string>>& env = {}) {
  const fs::path log_dir = fs::temp_directory_path() / ("utrcaf_cli_log_" + std::to_string(getpid()));
  fs::create_directories(log_dir);
  const pid_t pid = spawn_cli(args, cwd, env, log_dir / "out", log_dir / "err");
  int status = 0;
  waitpid(pid, &status, 0);
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(log_dir / "out");
  r.err = read_text_file(log_dir / "err");
  fs::remove_all(log_dir);
  return r;
}

inline fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / (name + "_" + std::to_string(getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, text);
}

// Starts `args` with a slowed-down writer, kills it once a temporary file
// for `declared` shows up, and reports whether that happened in time.
inline bool kill_during_write(const std::vector<std::string>& args, const fs::path& cwd,
                              const fs::path& declared) {
  const fs::path log_dir = fresh_dir("utrcaf_kill_log");
  const pid_t pid = spawn_cli(args, cwd, {{"UTRCAF_DEBUG_WRITE_DELAY_MS", "3000"}},
                              log_dir / "out", log_dir / "err");
  const std::string prefix = declared.filename().string() + ".tmp.";
  bool seen = false;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(30);
  while (!seen && std::chrono::steady_clock::now() < deadline) {
    if (fs::exists(declared.parent_path()))
      for (const auto& e : fs::directory_iterator(declared.parent_path()))
        if (e.path().filename().string().rfind(prefix, 0) == 0) seen = true;
    if (!seen) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  fs::remove_all(log_dir);
  return seen && WIFSIGNALED(status);
}

inline std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir));
  std::sort(out.begin(), out.end());
  return out;
}

inline const std::vector<std::vector<std::string>>& pipeline_commands() {
  static const std::vector<std::vector<std::string>> cmds{
      {"synth", "--config", "run.json"},
      {"train-source", "--config", "run.json"},
      {"utr", "--config", "run.json"},
      {"adapt", "--config", "run.json"},
      {"eval", "--config", "run.json"}};
  return cmds;
}

// Small default-architecture run used by the CLI suites.
inline std::string pipeline_config(std::uint64_t seed) {
  const std::string s = std::to_string(seed);
  return R"({"train": {"epochs": 10, "seed": )" + s + R"(},
  "perturb": {"seed": )" + s + R"(},
  "caf": {"max_epochs": 6, "lambda_cutoff_epoch": 4, "train": {"seed": )" + s + R"(}},
  "eval": {"seed": )" + s + R"(},
  "data": {"planted_shift": {"n_per_domain": 300, "seed": )" + s + R"(}},
  "paths": {"out_dir": "out"}})";
}

// Returns a description of every violated property; empty means all held.
// Checks: each pipeline command succeeds and is byte-identical on rerun,
// every output re-serializes to the same bytes, and a killed write never
// leaves a file at its declared path.
inline std::vector<std::string> determinism_failures() {
  std::vector<std::string> fails;
  const fs::path a = fresh_dir("utrcaf_det_a"), b = fresh_dir("utrcaf_det_b");
  write_text(a / "run.json", pipeline_config(11));
  write_text(b / "run.json", pipeline_config(11));

  for (const auto& cmd : pipeline_commands()) {
    const CliResult ra = run_cli(cmd, a);
    if (ra.code != 0) fails.push_back(cmd[0] + " exited " + std::to_string(ra.code) + ": " + ra.err);
    const CliResult rb = run_cli(cmd, b);
    if (rb.code != 0) fails.push_back(cmd[0] + " rerun exited " + std::to_string(rb.code));
    if (ra.out != rb.out) fails.push_back(cmd[0] + " printed different paths");
  }
  if (!fails.empty()) return fails;

  const auto files = files_under(a / "out");
  if (files != files_under(b / "out")) fails.push_back("runs produced different file sets");
  for (const auto& f : files) {
    const std::string ta = read_text_file(a / "out" / f);
    if (!fs::exists(b / "out" / f) || ta != read_text_file(b / "out" / f))
      fails.push_back(f.string() + " differs between runs");
  }

  // Rerunning a command in place must also reproduce its outputs.
  const std::string utr_before = read_text_file(a / "out" / "spectrum.csv");
  if (run_cli({"utr", "--config", "run.json"}, a).code != 0 ||
      read_text_file(a / "out" / "spectrum.csv") != utr_before)
    fails.push_back("utr rerun in place changed spectrum.csv");

  const fs::path out = a / "out";
  auto same = [&](const std::string& name, const std::string& again) {
    if (read_text_file(out / name) != again) fails.push_back(name + " does not round-trip");
  };
  for (const char* name : {"source.csv", "target.csv"})
    same(name, dataset_to_csv(dataset_from_csv(read_text_file(out / name), name)));
  for (const char* name : {"source_model.json", "adapted_model.json"})
    same(name, params_to_json(params_from_json(nlohmann::json::parse(read_text_file(out / name))))
                       .dump(2) + "\n");
  same("spectrum.csv", spectrum_to_csv(spectrum_from_csv(read_text_file(out / "spectrum.csv"))));
  for (const char* name : {"utr_d.csv", "utr_i.csv"})
    same(name, vector_to_csv(vector_from_csv(read_text_file(out / name))));
  for (const char* name : {"manifest.json", "report.json", "adapted_model.state.json"})
    same(name, nlohmann::json::parse(read_text_file(out / name)).dump(2) + "\n");

  // Kill while the first output is half written: nothing at the declared path.
  const fs::path k = fresh_dir("utrcaf_det_kill");
  write_text(k / "run.json", pipeline_config(11));
  if (!kill_during_write({"synth", "--config", "run.json"}, k, k / "out" / "source.csv"))
    fails.push_back("kill test: writer was not caught mid-write");
  else if (fs::exists(k / "out" / "source.csv"))
    fails.push_back("kill test: file present at declared path after kill");

  // Kill while overwriting: the previous complete file stays in place.
  const std::string old_model = read_text_file(out / "source_model.json");
  write_text(a / "run2.json", pipeline_config(12));
  fs::copy_file(a / "run.json", a / "run.bak", fs::copy_options::overwrite_existing);
  fs::copy_file(a / "run2.json", a / "run.json", fs::copy_options::overwrite_existing);
  if (!kill_during_write({"train-source", "--config", "run.json"}, a, out / "source_model.json"))
    fails.push_back("kill test (overwrite): writer was not caught mid-write");
  else if (read_text_file(out / "source_model.json") != old_model)
    fails.push_back("kill test (overwrite): previous file was damaged");

  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(k);
  return fails;
}

}  // namespace utrcaf::testing
