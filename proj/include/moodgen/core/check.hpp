#pragma once

#include <stdexcept>
#include <string>

namespace moodgen {

// Error taxonomy used across the pipeline. The CLI maps these to exit codes:
// ConfigError -> 2, everything else -> 3.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

class TrainingDiverged : public Error {
public:
    explicit TrainingDiverged(const std::string& msg) : Error(msg) {}
};

// Stage failures carry the stage name so run-all can report where it halted.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& msg)
        : Error("stage '" + stage + "' failed: " + msg), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

}  // namespace moodgen

#define MG_CHECK(cond, msg)                                   \
    do {                                                      \
        if (!(cond)) throw ::moodgen::ValidationError(msg);   \
    } while (0)

#define MG_CHECK_IO(cond, msg)                        \
    do {                                              \
        if (!(cond)) throw ::moodgen::IoError(msg);   \
    } while (0)

#define MG_CHECK_CONFIG(cond, msg)                        \
    do {                                                  \
        if (!(cond)) throw ::moodgen::ConfigError(msg);   \
    } while (0)

#define MG_CHECK_TRAINING(cond, msg)                           \
    do {                                                       \
        if (!(cond)) throw ::moodgen::TrainingDiverged(msg);   \
    } while (0)
