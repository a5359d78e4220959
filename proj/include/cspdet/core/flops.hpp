#pragma once

// Static multiply-accumulate accounting. Ops report their MAC cost into
// the active counter while a FlopScope is alive, attributed to the
// current section path, so reported numbers always reflect the graph
// that actually executes.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cspdet {

class FlopCounter {
 public:
  static FlopCounter*& active() {
    thread_local FlopCounter* cur = nullptr;
    return cur;
  }

  void add_macs(std::uint64_t m) {
    total_ += m;
    if (!sections_.empty()) by_section_[path_] += m;
  }

  void push_section(const std::string& name) {
    sections_.push_back(name);
    rebuild_path();
  }
  void pop_section() {
    sections_.pop_back();
    rebuild_path();
  }

  std::uint64_t total_macs() const { return total_; }
  const std::map<std::string, std::uint64_t>& macs_by_section() const { return by_section_; }

  // Sum over sections whose path starts with the given prefix.
  std::uint64_t macs_for_prefix(const std::string& prefix) const {
    std::uint64_t acc = 0;
    for (const auto& [k, v] : by_section_)
      if (k.rfind(prefix, 0) == 0) acc += v;
    return acc;
  }

 private:
  void rebuild_path() {
    path_.clear();
    for (size_t i = 0; i < sections_.size(); ++i) {
      if (i) path_ += '.';
      path_ += sections_[i];
    }
  }
  std::uint64_t total_ = 0;
  std::vector<std::string> sections_;
  std::string path_;
  std::map<std::string, std::uint64_t> by_section_;
};

// Activates a counter for the current scope.
class FlopScope {
 public:
  explicit FlopScope(FlopCounter& c) : prev_(FlopCounter::active()) { FlopCounter::active() = &c; }
  ~FlopScope() { FlopCounter::active() = prev_; }

 private:
  FlopCounter* prev_;
};

// Pushes a section name while a counter is active; no-op otherwise.
class FlopSection {
 public:
  explicit FlopSection(const std::string& name) : active_(FlopCounter::active() != nullptr) {
    if (active_) FlopCounter::active()->push_section(name);
  }
  ~FlopSection() {
    if (active_) FlopCounter::active()->pop_section();
  }

 private:
  bool active_;
};

inline void count_macs(std::uint64_t m) {
  if (FlopCounter* c = FlopCounter::active()) c->add_macs(m);
}

}  // namespace cspdet
