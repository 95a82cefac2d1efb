#pragma once

#include "topodiff/common.hpp"

#include <map>
#include <memory>
#include <string>

namespace topodiff {

/// Maps a cleaned joint name to a fixed-length vector. Identical strings map
/// to identical vectors regardless of the skeleton they come from.
class NameEmbedder {
 public:
  virtual ~NameEmbedder() = default;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd embed(const std::string& name) const = 0;
  /// Short identifier recorded in checkpoints ("hashed:64", "table:<path>").
  virtual std::string describe() const = 0;
};

/// Bag of words and character trigrams, signed-hashed into `dim` buckets and
/// L2-normalized. Shared sub-words give related names overlapping vectors.
class HashedNameEmbedder final : public NameEmbedder {
 public:
  explicit HashedNameEmbedder(int dim = 64) : dim_(dim) {}
  int dim() const override { return dim_; }
  Eigen::VectorXd embed(const std::string& name) const override;
  std::string describe() const override { return "hashed:" + std::to_string(dim_); }

 private:
  int dim_;
};

/// Precomputed vectors loaded from a text table, one entry per line:
/// `<name>\t<v1> <v2> ... <vd>`. Lines starting with '#' are ignored.
class TableNameEmbedder final : public NameEmbedder {
 public:
  static TableNameEmbedder load(const std::string& path);
  static TableNameEmbedder parse(const std::string& text, std::string source = "inline");

  int dim() const override { return dim_; }
  Eigen::VectorXd embed(const std::string& name) const override;
  std::string describe() const override { return "table:" + source_; }
  std::size_t size() const { return table_.size(); }

 private:
  int dim_ = 0;
  std::string source_;
  std::map<std::string, Eigen::VectorXd> table_;
};

/// Builds an embedder from a describe() string.
std::shared_ptr<const NameEmbedder> make_name_embedder(const std::string& spec);

}  // namespace topodiff
