#pragma once

#include <iosfwd>

#include "hazardfield/config.hpp"

namespace hazardfield::cli {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitIo = 4;

int cmd_simulate(const Config& config, std::ostream& log);
int cmd_fit(const Config& config, std::ostream& log);
int cmd_diagnose(const Config& config, std::ostream& log);
int cmd_validate(const Config& config, std::ostream& log);
int cmd_study(const Config& config, std::ostream& log);
int cmd_functional(const Config& config, std::ostream& log);

/// Maps a thrown error to the documented exit code, logging the message.
int run_command(const std::string& name, const Config& config, std::ostream& log,
                std::ostream& err);

}  // namespace hazardfield::cli
