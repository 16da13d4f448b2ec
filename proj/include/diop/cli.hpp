#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "diop/distill.hpp"
#include "diop/io.hpp"
#include "diop/model.hpp"
#include "diop/pipeline.hpp"
#include "diop/synth.hpp"

namespace diop {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2 };

/// Entry point of the `diop` tool. `args` excludes the program name.
/// Returns 0 on success, 1 on usage errors, 2 on runtime failures; error
/// messages go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Every accepted configuration key with its default value.
std::map<std::string, std::string> default_settings();

// Typed views of a resolved configuration.
ModelConfig model_config(const KeyValueConfig& c);
PipelineConfig pipeline_config(const KeyValueConfig& c);
DistillConfig distill_config(const KeyValueConfig& c);
SynthSpec synth_spec(const KeyValueConfig& c);

struct LabeledFile {
  std::string id;
  Audio audio;
  Annotation reference;
};

/// Loads every "<id>.wav" with its "<id>.rttm" from a directory, sorted by id.
std::vector<LabeledFile> load_labeled_dir(const std::filesystem::path& dir, std::uint32_t sample_rate);

/// Training chunks from several files with a shared, sorted class list.
Dataset dataset_from_files(const std::vector<LabeledFile>& files, double chunk_duration, double hop);

/// DER summed over files (components added before dividing).
DERBreakdown aggregate_der(const std::vector<DERBreakdown>& parts);

}  // namespace diop
