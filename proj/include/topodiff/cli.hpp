#pragma once

#include "topodiff/analysis.hpp"
#include "topodiff/denoiser.hpp"
#include "topodiff/metrics.hpp"
#include "topodiff/preprocess.hpp"
#include "topodiff/training.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace topodiff::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,  ///< bad flags or config
  kExitMissingCheckpoint = 3,
  kExitShapeMismatch = 4,
  kExitData = 5,  ///< unreadable inputs, nothing to process
};

class CommandError : public Error {
 public:
  CommandError(int code, const std::string& what) : Error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

/// Record of one invocation, written as run_manifest.json next to the
/// command's outputs whether it succeeded or not.
struct RunManifest {
  std::string command;
  std::string config;  ///< resolved configuration (TOML, flags included)
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  ///< path, fingerprint
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
  std::string started;
  std::string finished;
  int exit_code = 0;
  std::string message;

  std::string to_json() const;
};

/// Runs `body`, maps failures to exit codes and writes the manifest into
/// `out_dir` before returning. Errors are reported on `err`.
int execute(const std::string& command, const std::string& out_dir, const std::string& config,
            std::uint64_t seed, const std::function<void(RunManifest&)>& body, std::ostream& err);

struct PreprocessCommand {
  std::string in_dir;
  std::string out_dir;
  PreprocessConfig config;
};

struct TrainCommand {
  std::string dataset;
  std::string out_dir;
  std::string resume;  ///< checkpoint to continue from
  DenoiserConfig model;
  TrainConfig train;
};

struct SampleCommand {
  std::string checkpoint;
  std::string dataset;
  std::vector<std::string> skeletons;  ///< empty: every skeleton
  std::string out_dir;
  int frames = 120;
  int count = 1;
  std::uint64_t seed = 0;
  bool footlock = false;
};

struct EditCommand {
  std::string checkpoint;
  std::string dataset;
  std::string skeleton;
  std::string input;  ///< canonical BVH
  std::string out_dir;
  std::string fixed_frames;              ///< "0-9,30-39"
  std::vector<std::string> fixed_joints;  ///< joint names
  bool fix_all = false;
  std::uint64_t seed = 0;
};

struct EvalCommand {
  std::string dataset;
  std::string generated;  ///< <dir>/<skeleton>/*.tdmt or *.bvh
  std::string out_dir;
  MetricConfig metrics;
};

struct AnalyzeCommand {
  std::string checkpoint;
  std::string dataset;
  std::string mode = "spatial";  ///< spatial, temporal or segment
  std::string reference;         ///< "<skeleton>/<clip>"
  std::string target;            ///< unused for segment
  std::string out_dir;
  int k = 3;
  AnalysisConfig analysis;
};

void cmd_preprocess(const PreprocessCommand& c, RunManifest& m, std::ostream& log);
void cmd_train(const TrainCommand& c, RunManifest& m, std::ostream& log);
void cmd_sample(const SampleCommand& c, RunManifest& m, std::ostream& log);
void cmd_edit(const EditCommand& c, RunManifest& m, std::ostream& log);
void cmd_eval(const EvalCommand& c, RunManifest& m, std::ostream& log);
void cmd_analyze(const AnalyzeCommand& c, RunManifest& m, std::ostream& log);

/// "0-9,15,30-39" -> sorted unique frames; throws CommandError on bad input
/// or frames outside [0, frames).
std::vector<int> parse_frame_ranges(const std::string& spec, int frames);

/// Fingerprint of a file or of every regular file below a directory.
std::string path_fingerprint(const std::string& path);

}  // namespace topodiff::cli
