#include "topodiff/name_embedder.hpp"

#include "topodiff/io_util.hpp"

#include <sstream>

namespace topodiff {

Eigen::VectorXd HashedNameEmbedder::embed(const std::string& name) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  auto add = [&](const std::string& piece, double weight) {
    const std::uint64_t h = fnv1a(piece);
    const int bucket = static_cast<int>(h % static_cast<std::uint64_t>(dim_));
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[bucket] += sign * weight;
  };
  std::istringstream is(name);
  std::string word;
  while (is >> word) {
    add("w:" + word, 2.0);
    const std::string padded = "<" + word + ">";
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      add("c:" + padded.substr(i, 3), 1.0);
    }
  }
  const double n = v.norm();
  if (n > 0) v /= n;
  return v;
}

TableNameEmbedder TableNameEmbedder::parse(const std::string& text, std::string source) {
  TableNameEmbedder t;
  t.source_ = std::move(source);
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error("name table line " + std::to_string(line_no) + ": missing tab");
    }
    std::istringstream vs(line.substr(tab + 1));
    std::vector<double> values;
    double x;
    while (vs >> x) values.push_back(x);
    if (t.dim_ == 0) t.dim_ = static_cast<int>(values.size());
    if (values.empty() || static_cast<int>(values.size()) != t.dim_) {
      throw Error("name table line " + std::to_string(line_no) + ": inconsistent dimension");
    }
    t.table_[line.substr(0, tab)] =
        Eigen::Map<const Eigen::VectorXd>(values.data(), t.dim_);
  }
  if (t.table_.empty()) throw Error("name table is empty");
  return t;
}

TableNameEmbedder TableNameEmbedder::load(const std::string& path) {
  return parse(read_text_file(path), path);
}

Eigen::VectorXd TableNameEmbedder::embed(const std::string& name) const {
  auto it = table_.find(name);
  if (it == table_.end()) throw Error("no precomputed embedding for joint name '" + name + "'");
  return it->second;
}

std::shared_ptr<const NameEmbedder> make_name_embedder(const std::string& spec) {
  if (spec.rfind("hashed:", 0) == 0) {
    return std::make_shared<HashedNameEmbedder>(std::stoi(spec.substr(7)));
  }
  if (spec.rfind("table:", 0) == 0) {
    return std::make_shared<TableNameEmbedder>(TableNameEmbedder::load(spec.substr(6)));
  }
  throw Error("unknown name embedder '" + spec + "'");
}

}  // namespace topodiff
