#include "dmeta/jsonl.hpp"

#include "dmeta/errors.hpp"

namespace dmeta {

JsonlWriter::JsonlWriter(const std::string& path) : out_(path, std::ios::trunc) {
  if (!out_) throw IoError("cannot open for writing: " + path);
}

void JsonlWriter::write(const nlohmann::json& row) {
  std::lock_guard<std::mutex> lock(mu_);
  out_ << row.dump() << '\n';
  if (!out_) throw IoError("write failed on metrics stream");
}

void JsonlWriter::flush() {
  std::lock_guard<std::mutex> lock(mu_);
  out_.flush();
}

}  // namespace dmeta
