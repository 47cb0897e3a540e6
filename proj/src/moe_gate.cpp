#include "mistere/moe_gate.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mistere {

MoeGate MoeGate::create(ParameterSet& params, const std::string& prefix,
                        std::size_t input_dim, std::size_t hidden, Rng& rng) {
  MoeGate g;
  if (hidden == 0) {
    g.first_ = nn::Linear::create(params, prefix + ".fc", input_dim, 3, rng);
  } else {
    g.first_ = nn::Linear::create(params, prefix + ".fc1", input_dim, hidden, rng);
    g.second_ = nn::Linear::create(params, prefix + ".fc2", hidden, 3, rng);
  }
  // Start from uniform weights over the experts.
  nn::Linear& last = g.second_ ? *g.second_ : g.first_;
  last.weight.mutable_value().fill(0.0);
  return g;
}

Value MoeGate::weights_from(const Value& gate_input) const {
  Value g = first_(gate_input);
  if (second_) g = (*second_)(relu(g));
  return softmax(g);
}

Value MoeGate::forward(const ExpertLogits& logits) const {
  const std::vector<Value> parts{logits.speech, logits.text, logits.multimodal};
  return weights_from(concat(parts, 1));
}

Value fuse(const ExpertLogits& logits, const Value& beta) {
  return convex_combine(logits.speech, logits.text, logits.multimodal, beta);
}

namespace {

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

void write_gate_csv(const std::filesystem::path& path, const std::vector<GateRecord>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "conversation_id,utterance_index,beta_s,beta_t,beta_m,label,prediction\n";
  for (const auto& r : rows) {
    os << r.conversation_id << ',' << r.utterance_index << ',' << format_double(r.beta_s) << ','
       << format_double(r.beta_t) << ',' << format_double(r.beta_m) << ',' << r.label << ','
       << r.prediction << '\n';
  }
}

std::vector<GateRecord> read_gate_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);  // header
  std::vector<GateRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 7 columns");
    }
    GateRecord r;
    r.conversation_id = f[0];
    r.utterance_index = std::stoull(f[1]);
    r.beta_s = std::stod(f[2]);
    r.beta_t = std::stod(f[3]);
    r.beta_m = std::stod(f[4]);
    r.label = std::stoull(f[5]);
    r.prediction = std::stoull(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mistere
