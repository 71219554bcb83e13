#pragma once

#include <fstream>
#include <mutex>
#include <string>

#include <json.hpp>

namespace dmeta {

/// Append-only JSON-lines writer, one object per line. Thread-safe.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path);

  void write(const nlohmann::json& row);
  void flush();

 private:
  std::ofstream out_;
  std::mutex mu_;
};

}  // namespace dmeta
