#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "levrl/config.hpp"

LEVRL_NAMESPACE_BEGIN

// Subcommand bodies behind the `levrl` executable. Each returns the process
// exit status and reports failures by throwing levrl::Error.

/// Writes the dataset described by config.data into config.out_dir.
int cmd_gen(const RunConfig& config, std::ostream& out);

/// Supervised training on config.data_dir. Writes config.json, metrics.jsonl
/// and model.ckpt (or config.checkpoint) into config.out_dir. With `resume`,
/// continues from an existing checkpoint at that path.
int cmd_pretrain(const RunConfig& config, bool resume, std::ostream& out);

/// RL fine-tuning of the pretrained config.checkpoint. Sweep mode runs the
/// five temperature settings instead of the single configured schedule.
int cmd_rl(const RunConfig& config, std::ostream& out);

struct DecodeRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::filesystem::path output;  // empty: stdout
  int max_iters = 10;
  int threads = 1;
  bool text = false;  // surface strings instead of JSON records
};

/// Greedy decoding of every "src" in the input file.
int cmd_decode(const DecodeRequest& request, std::ostream& out);

struct EvalRequest {
  std::filesystem::path hyp;  // records with "hyp"
  std::filesystem::path ref;  // records with "tgt"
  // Alternative: decode `input` with `checkpoint` and score against its "tgt".
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  int max_iters = 10;
  int threads = 1;
};

/// Prints corpus BLEU x100 with two decimals.
int cmd_eval(const EvalRequest& request, std::ostream& out);

/// Renders a CSV report as a table. A run directory shows its advantage-SD
/// table, sweep table, metrics and trace summaries, whichever exist.
int cmd_stats(const std::filesystem::path& input, std::ostream& out);

/// Aligned plain-text rendering of a CSV document.
std::string render_csv_table(const std::string& csv);

/// Checkpoint path a command will read, with an actionable error when absent.
std::filesystem::path require_checkpoint(const std::filesystem::path& path, const std::string& hint);

LEVRL_NAMESPACE_END
