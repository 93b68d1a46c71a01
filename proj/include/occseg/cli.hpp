#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "occseg/eval.hpp"
#include "occseg/sbm.hpp"
#include "occseg/scene_init.hpp"
#include "occseg/solver.hpp"
#include "occseg/synth.hpp"

namespace occseg {

/// Bad command-line or configuration input; exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNotConverged = 3 };

/// Flat key/value configuration. Every key has a default; values are kept as
/// the strings they were given so the echo reproduces them exactly.
///
/// Text format: one `key = value` per line, `#` starts a comment. A JSON
/// file whose top level (or "config" member) maps keys to values is also
/// accepted, so metadata sidecars can be fed back in.
class RunConfig {
 public:
  RunConfig();

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::vector<std::string> keys() const;

  void load_file(const std::filesystem::path& path);
  void load_text(std::istream& in, const std::string& source = "config");
  /// For every key, PREFIX + KEY (upper case, '.' -> '_') overrides it.
  void apply_env(const std::string& prefix = "OCCSEG_");
  /// Sets the desk-scale toy values (training profile and shape weight).
  void apply_profile(const std::string& name);

  void write(std::ostream& out) const;
  nlohmann::json to_json() const;

  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  SolverConfig solver() const;
  InitConfig init() const;
  SbmTrainingConfig training() const;
  SbmArchitecture architecture() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Environment variable name for a key under the given prefix.
std::string env_name(const std::string& prefix, const std::string& key);

/// Shapes named by data.dataset: a directory of masks, or
/// "toy:cross,square,disk" (data.toy_count shapes per kind).
ShapeDataset load_shapes(const RunConfig& cfg, int width, int height);

struct SynthArgs {
  std::filesystem::path out;
};
struct TrainArgs {
  std::filesystem::path out;
  std::filesystem::path resume;
};
struct SegmentArgs {
  std::filesystem::path image;
  std::filesystem::path model;
  std::filesystem::path meta;
  std::filesystem::path out;
  std::string method = "multi";
  int k = 0;
  std::vector<std::filesystem::path> seeds;
};
struct EvalArgs {
  std::filesystem::path model;
  std::filesystem::path out;
  std::string methods = "all";
};
struct SampleArgs {
  std::filesystem::path model;
  std::filesystem::path out;
  int count = 16;
  int gibbs_steps = 100;
};

/// 8-bit RGB composite: the image in gray, each pixel covered by a mask
/// blended 50% with the colour of its nearest region (red, green, blue from
/// front to back).
std::vector<std::uint8_t> overlay_rgb(const Image& u, const std::vector<BinaryMask>& masks);

int cmd_synth(const RunConfig& cfg, const SynthArgs& args);
int cmd_train(const RunConfig& cfg, const TrainArgs& args);
int cmd_segment(const RunConfig& cfg, const SegmentArgs& args);
int cmd_eval(const RunConfig& cfg, const EvalArgs& args);
int cmd_sample(const RunConfig& cfg, const SampleArgs& args);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace occseg
