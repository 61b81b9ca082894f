#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ctmm/cohort/types.hpp"

namespace ctmm::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericalAbort = 3, kIoError = 4 };

/// Environment variable naming the directory used when --out is omitted.
inline constexpr const char* kOutRootEnv = "CTMM_OUT_ROOT";

/// Patients, event counts, wearable coverage and label prevalence per horizon.
std::string cohort_summary(const Cohort& c);

struct CommonArgs {
  std::string config;
  std::string cohort;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> variants;
  std::optional<std::vector<std::string>> scenarios;
};

// Each command throws io::ConfigError, io::IoError, io::FormatError or
// train::NonFiniteLossError; run() maps them to exit codes.
void cmd_generate(const CommonArgs& a, std::ostream& out, std::ostream& err);
void cmd_pretrain(const CommonArgs& a, std::ostream& out, std::ostream& err);
void cmd_ablate(const CommonArgs& a, std::ostream& out, std::ostream& err);
void cmd_probe(const CommonArgs& a, std::ostream& out, std::ostream& err);
void cmd_robustness(const CommonArgs& a, std::ostream& out, std::ostream& err);
void cmd_fractions(const CommonArgs& a, std::ostream& out, std::ostream& err);
void cmd_report(const CommonArgs& a, const std::vector<std::string>& inputs, std::ostream& out, std::ostream& err);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctmm::cli
