#include "evomoe/routing.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "evomoe/error.hpp"
#include "evomoe/model.hpp"

namespace evomoe {

double coefficient_of_variation(std::span<const std::uint64_t> loads) {
  if (loads.empty()) return 0.0;
  double mean = 0.0;
  for (auto v : loads) mean += static_cast<double>(v);
  mean /= static_cast<double>(loads.size());
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (auto v : loads) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  var /= static_cast<double>(loads.size());
  return std::sqrt(var) / mean;
}

const RoutingRecord& RoutingTrace::append(std::int64_t iter, std::size_t layer, const GateDecision& decision,
                                          const Batch& batch, std::span<const std::int32_t> tracked_tokens) {
  if (decision.tokens != batch.rows()) throw DimensionError("routing trace: decision/batch size mismatch");
  RoutingRecord rec;
  rec.iter = iter;
  rec.layer = layer;
  rec.expert_counts.assign(decision.experts, 0);
  for (const auto& ids : decision.ids)
    for (std::size_t i : ids) ++rec.expert_counts[i];

  for (auto token : tracked_tokens) {
    TrackedChoice choice{token, std::vector<std::uint64_t>(decision.experts, 0)};
    bool seen = false;
    for (std::size_t s = 0; s < decision.tokens; ++s) {
      if (batch.inputs[s] != token) continue;
      seen = true;
      for (std::size_t i : decision.ids[s]) ++choice.expert_counts[i];
    }
    if (seen) rec.tracked.push_back(std::move(choice));
  }

  records_.push_back(std::move(rec));
  return records_.back();
}

void RoutingTrace::count_preceding(std::size_t layer, const GateDecision& decision, const Batch& batch) {
  if (vocab_ == 0) return;
  if (decision.tokens != batch.rows()) throw DimensionError("routing trace: decision/batch size mismatch");
  auto& table = preceding_[layer];
  if (table.size() < decision.experts) table.resize(decision.experts, std::vector<std::uint64_t>(vocab_, 0));
  for (std::size_t s = 0; s < decision.tokens; ++s) {
    if (s % batch.seq_len == 0) continue;  // first position has no predecessor
    const auto prev = batch.inputs[s - 1];
    if (prev < 0 || static_cast<std::size_t>(prev) >= vocab_) continue;  // mask ids
    for (std::size_t i : decision.ids[s]) ++table[i][static_cast<std::size_t>(prev)];
  }
}

void RoutingTrace::add_record(RoutingRecord record) { records_.push_back(std::move(record)); }

std::vector<std::pair<std::int32_t, std::uint64_t>> RoutingTrace::top_preceding(std::size_t layer,
                                                                               std::size_t expert,
                                                                               std::size_t k) const {
  std::vector<std::pair<std::int32_t, std::uint64_t>> out;
  const auto it = preceding_.find(layer);
  if (it == preceding_.end() || expert >= it->second.size()) return out;
  const auto& counts = it->second[expert];
  for (std::size_t t = 0; t < counts.size(); ++t)
    if (counts[t] > 0) out.emplace_back(static_cast<std::int32_t>(t), counts[t]);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (out.size() > k) out.resize(k);
  return out;
}

std::vector<std::size_t> RoutingTrace::layers_with_tokens() const {
  std::vector<std::size_t> out;
  for (const auto& [layer, table] : preceding_) out.push_back(layer);
  return out;
}

std::size_t RoutingTrace::experts_in_layer(std::size_t layer) const {
  const auto it = preceding_.find(layer);
  return it == preceding_.end() ? 0 : it->second.size();
}

void RoutingTrace::write_csv(std::ostream& out) const {
  out << "iter,layer,expert,token_count\n";
  for (const auto& rec : records_)
    for (std::size_t e = 0; e < rec.expert_counts.size(); ++e)
      out << rec.iter << ',' << rec.layer << ',' << e << ',' << rec.expert_counts[e] << '\n';
}

RoutingTrace RoutingTrace::read_csv(std::istream& in) {
  RoutingTrace trace;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "iter,layer,expert,token_count") {
        throw ParseError("routing trace header must be 'iter,layer,expert,token_count'", line_no);
      }
      header = true;
      continue;
    }
    std::int64_t fields[4];
    std::size_t pos = 0;
    for (int f = 0; f < 4; ++f) {
      const auto end = f < 3 ? line.find(',', pos) : line.size();
      if (end == std::string::npos) throw ParseError("routing trace row needs 4 fields", line_no);
      const auto* first = line.data() + pos;
      const auto* last = line.data() + end;
      const auto [ptr, ec] = std::from_chars(first, last, fields[f]);
      if (ec != std::errc() || ptr != last || fields[f] < 0) {
        throw ParseError("routing trace field " + std::to_string(f + 1) + " is not a non-negative integer",
                         line_no);
      }
      pos = end + 1;
    }
    const auto iter = fields[0];
    const auto layer = static_cast<std::size_t>(fields[1]);
    const auto expert = static_cast<std::size_t>(fields[2]);
    auto& recs = trace.records_;
    if (recs.empty() || recs.back().iter != iter || recs.back().layer != layer) {
      if (expert != 0) throw ParseError("routing trace rows for a record must start at expert 0", line_no);
      recs.push_back(RoutingRecord{iter, layer, {}, {}});
    }
    if (expert != recs.back().expert_counts.size()) {
      throw ParseError("routing trace experts must be listed consecutively", line_no);
    }
    recs.back().expert_counts.push_back(static_cast<std::uint64_t>(fields[3]));
  }
  if (!header) throw ParseError("routing trace is empty", std::max<std::size_t>(line_no, 1));
  return trace;
}

std::string RoutingTrace::top_tokens_json(std::size_t k) const {
  nlohmann::json top = nlohmann::json::object();
  for (const auto& [layer, table] : preceding_) {
    nlohmann::json experts = nlohmann::json::object();
    for (std::size_t e = 0; e < table.size(); ++e) {
      nlohmann::json list = nlohmann::json::array();
      for (const auto& [token, count] : top_preceding(layer, e, k)) list.push_back({token, count});
      experts[std::to_string(e)] = list;
    }
    top[std::to_string(layer)] = experts;
  }
  nlohmann::json tracked = nlohmann::json::array();
  for (const auto& rec : records_)
    for (const auto& t : rec.tracked)
      tracked.push_back({{"iter", rec.iter}, {"layer", rec.layer}, {"token", t.token}, {"experts", t.expert_counts}});
  return nlohmann::json{{"top_preceding", top}, {"tracked", tracked}}.dump();
}

}  // namespace evomoe
