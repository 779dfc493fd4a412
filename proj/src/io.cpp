#include "rte/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rte {

using nlohmann::json;

namespace {

json descriptor_to_json(const TaskDescriptor& d) {
  json j;
  switch (d.kind) {
    case TaskDescriptor::Kind::Parametric:
      j["kind"] = "parametric";
      j["family"] = family_name(d.family);
      j["params"] = d.params;
      break;
    case TaskDescriptor::Kind::Polynomial:
      j["kind"] = "polynomial";
      j["coeffs"] = d.coeffs;
      break;
    case TaskDescriptor::Kind::Composition:
      j["kind"] = "composition";
      j["recipe"] = d.recipe;
      break;
    case TaskDescriptor::Kind::Parity:
      j["kind"] = "parity";
      j["mask"] = d.parity_mask;
      break;
  }
  if (d.has_region) j["region"] = region_name(d.region);
  return j;
}

TaskDescriptor descriptor_from_json(const json& j) {
  TaskDescriptor d;
  const std::string kind = j.at("kind");
  if (kind == "parametric") {
    d.kind = TaskDescriptor::Kind::Parametric;
    d.family = family_from_name(j.at("family"));
    d.params = j.at("params").get<std::vector<double>>();
  } else if (kind == "polynomial") {
    d.kind = TaskDescriptor::Kind::Polynomial;
    d.coeffs = j.at("coeffs").get<std::vector<double>>();
  } else if (kind == "composition") {
    d.kind = TaskDescriptor::Kind::Composition;
    d.recipe = j.at("recipe").get<std::vector<int>>();
  } else if (kind == "parity") {
    d.kind = TaskDescriptor::Kind::Parity;
    d.parity_mask = j.at("mask").get<std::vector<int>>();
  } else {
    throw std::invalid_argument("unknown task kind: " + kind);
  }
  if (j.contains("region")) {
    d.has_region = true;
    d.region = region_from_name(j.at("region"));
  }
  return d;
}

json pairs_to_json(const std::vector<std::pair<double, double>>& pairs) {
  json arr = json::array();
  for (const auto& [x, y] : pairs) arr.push_back({x, y});
  return arr;
}

std::vector<std::pair<double, double>> pairs_from_json(const json& arr) {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : arr) out.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  return out;
}

}  // namespace

void save_library_jsonl(const TaskLibrary& lib, const std::string& path) {
  std::ostringstream out;
  // Primitive table first (composition libraries), flagged by record type.
  for (int i = 0; i < lib.primitives.size(); ++i) {
    const Primitive& p = lib.primitives.at(i);
    json j = {{"record", "primitive"},
              {"id", i},
              {"primitive_kind", Primitive::kind_name(p.kind)},
              {"params", p.params}};
    out << j.dump() << "\n";
  }
  for (const TaskEntry& t : lib.tasks) {
    json j = descriptor_to_json(t.desc);
    j["record"] = "task";
    j["id"] = t.id;
    j["label"] = t.label;
    j["noise_seed"] = t.data.noise_seed;
    j["grid_x"] = t.data.grid_x;
    j["context_idx"] = t.data.context_idx;
    j["query_idx"] = t.data.query_idx;
    j["context"] = pairs_to_json(t.data.context);
    j["query"] = pairs_to_json(t.data.query);
    if (t.predecessor_id >= 0) j["predecessor"] = t.predecessor_id;
    if (!t.constituent_ids.empty()) j["constituents"] = t.constituent_ids;
    out << j.dump() << "\n";
  }
  atomic_write_text(path, out.str());
}

TaskLibrary load_library_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open library file: " + path);
  TaskLibrary lib;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const std::string record = j.value("record", "task");
    if (record == "primitive") {
      Primitive p;
      p.kind = Primitive::kind_from_name(j.at("primitive_kind"));
      p.params = j.at("params").get<std::vector<double>>();
      lib.primitives.add(std::move(p));
      continue;
    }
    TaskEntry t;
    t.desc = descriptor_from_json(j);
    t.label = j.value("label", "");
    t.data.noise_seed = j.value("noise_seed", 0ULL);
    t.data.grid_x = j.at("grid_x").get<std::vector<double>>();
    t.data.context_idx = j.at("context_idx").get<std::vector<int>>();
    t.data.query_idx = j.at("query_idx").get<std::vector<int>>();
    t.data.context = pairs_from_json(j.at("context"));
    t.data.query = pairs_from_json(j.at("query"));
    t.predecessor_id = j.value("predecessor", -1);
    if (j.contains("constituents")) t.constituent_ids = j.at("constituents").get<std::vector<int>>();
    lib.add(std::move(t));
  }
  return lib;
}

void save_model_json(const MlpModel& model, const std::string& path,
                     const std::string& config_hash, const OptimState* opt) {
  json j;
  j["layer_sizes"] = model.layer_sizes;
  j["config_hash"] = config_hash;
  json weights = json::array();
  for (size_t l = 0; l < model.weights.size(); ++l) {
    json layer;
    layer["w"] = std::vector<double>(model.weights[l].data(),
                                     model.weights[l].data() + model.weights[l].size());
    layer["b"] = std::vector<double>(model.biases[l].data(),
                                     model.biases[l].data() + model.biases[l].size());
    weights.push_back(std::move(layer));
  }
  j["layers"] = std::move(weights);
  if (opt) {
    json o;
    o["step"] = opt->step;
    o["lr"] = opt->cfg.lr;
    o["beta1"] = opt->cfg.beta1;
    o["beta2"] = opt->cfg.beta2;
    o["eps"] = opt->cfg.eps;
    o["weight_decay"] = opt->cfg.weight_decay;
    json moments = json::array();
    for (size_t l = 0; l < opt->m_w.size(); ++l) {
      json layer;
      layer["m_w"] = std::vector<double>(opt->m_w[l].data(), opt->m_w[l].data() + opt->m_w[l].size());
      layer["v_w"] = std::vector<double>(opt->v_w[l].data(), opt->v_w[l].data() + opt->v_w[l].size());
      layer["m_b"] = std::vector<double>(opt->m_b[l].data(), opt->m_b[l].data() + opt->m_b[l].size());
      layer["v_b"] = std::vector<double>(opt->v_b[l].data(), opt->v_b[l].data() + opt->v_b[l].size());
      moments.push_back(std::move(layer));
    }
    o["moments"] = std::move(moments);
    j["optimizer"] = std::move(o);
  }
  atomic_write_text(path, j.dump());
}

MlpModel load_model_json(const std::string& path, std::string* config_hash) {
  json j = json::parse(read_text(path));
  MlpModel m;
  m.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  if (config_hash) *config_hash = j.value("config_hash", "");
  const json& layers = j.at("layers");
  for (size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    const int rows = m.layer_sizes[l + 1], cols = m.layer_sizes[l];
    const auto w = layers.at(l).at("w").get<std::vector<double>>();
    const auto b = layers.at(l).at("b").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != rows * cols || static_cast<int>(b.size()) != rows)
      throw std::runtime_error("load_model_json: corrupt checkpoint " + path);
    MatrixXd wm(rows, cols);
    std::copy(w.begin(), w.end(), wm.data());
    VectorXd bv(rows);
    std::copy(b.begin(), b.end(), bv.data());
    m.weights.push_back(std::move(wm));
    m.biases.push_back(std::move(bv));
  }
  return m;
}

void atomic_write_text(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + tmp.string());
    out << content;
  }
  fs::rename(tmp, target);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string content_hash(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string CsvTable::to_string() const {
  std::ostringstream os;
  for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
  return os.str();
}

void write_csv(const CsvTable& table, const std::string& path) {
  atomic_write_text(path, table.to_string());
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv: " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

}  // namespace rte
