#pragma once

#include <string>
#include <vector>

#include "rte/neural.hpp"
#include "rte/task_families.hpp"

namespace rte {

/// Task libraries serialize to line-oriented JSON, one record per task.
/// Field names are part of the format contract (see README).
void save_library_jsonl(const TaskLibrary& lib, const std::string& path);
TaskLibrary load_library_jsonl(const std::string& path);

/// Self-describing JSON model checkpoint: layer sizes, parameters, optional
/// optimizer state, and a hash of the training config.
void save_model_json(const MlpModel& model, const std::string& path,
                     const std::string& config_hash = "", const OptimState* opt = nullptr);
MlpModel load_model_json(const std::string& path, std::string* config_hash = nullptr);

/// Writes text atomically (temp file in the same directory, then rename).
void atomic_write_text(const std::string& path, const std::string& content);

std::string read_text(const std::string& path);

/// Deterministic number formatting used by every CSV/JSON export.
std::string format_double(double v);

/// FNV-1a hash of a string, hex-encoded; used for config hashes.
std::string content_hash(const std::string& text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string to_string() const;
};

void write_csv(const CsvTable& table, const std::string& path);
CsvTable read_csv(const std::string& path);

}  // namespace rte
