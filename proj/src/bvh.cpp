#include "topodiff/bvh.hpp"

#include "topodiff/io_util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace topodiff {

const char* channel_name(BvhChannel c) {
  switch (c) {
    case BvhChannel::kXpos: return "Xposition";
    case BvhChannel::kYpos: return "Yposition";
    case BvhChannel::kZpos: return "Zposition";
    case BvhChannel::kXrot: return "Xrotation";
    case BvhChannel::kYrot: return "Yrotation";
    case BvhChannel::kZrot: return "Zrotation";
  }
  return "?";
}

bool is_rotation(BvhChannel c) {
  return c == BvhChannel::kXrot || c == BvhChannel::kYrot ||
         c == BvhChannel::kZrot;
}

int BvhDocument::total_channels() const {
  int n = 0;
  for (const auto& j : joints) n += static_cast<int>(j.channels.size());
  return n;
}

std::vector<int> BvhDocument::channel_offsets() const {
  std::vector<int> out;
  int c = 0;
  for (const auto& j : joints) {
    out.push_back(c);
    c += static_cast<int>(j.channels.size());
  }
  return out;
}

namespace {

struct Token {
  std::string text;
  int line;
};

std::vector<Token> tokenize(const std::string& text, std::size_t begin,
                            std::size_t end, int first_line) {
  std::vector<Token> out;
  int line = first_line;
  std::size_t i = begin;
  while (i < end) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '{' || c == '}') {
      out.push_back({std::string(1, c), line});
      ++i;
    } else {
      std::size_t j = i;
      while (j < end && !std::isspace(static_cast<unsigned char>(text[j])) &&
             text[j] != '{' && text[j] != '}') {
        ++j;
      }
      out.push_back({text.substr(i, j - i), line});
      i = j;
    }
  }
  return out;
}

class HierarchyParser {
 public:
  explicit HierarchyParser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  std::vector<BvhJoint> parse() {
    expect("HIERARCHY");
    expect("ROOT");
    parse_joint(-1);
    if (pos_ != tokens_.size()) {
      fail(tokens_[pos_].line, "unexpected token '" + tokens_[pos_].text +
                                   "' after root joint (multiple roots unsupported)");
    }
    return std::move(joints_);
  }

 private:
  [[noreturn]] void fail(int line, const std::string& msg) {
    throw BvhParseError(line, msg);
  }

  const Token& next() {
    if (pos_ >= tokens_.size()) {
      fail(tokens_.empty() ? 1 : tokens_.back().line, "unexpected end of hierarchy");
    }
    return tokens_[pos_++];
  }

  void expect(const std::string& word) {
    const Token& t = next();
    if (t.text != word) fail(t.line, "expected '" + word + "', got '" + t.text + "'");
  }

  double number() {
    const Token& t = next();
    char* end = nullptr;
    const double v = std::strtod(t.text.c_str(), &end);
    if (end == t.text.c_str() || *end != '\0') {
      fail(t.line, "expected a number, got '" + t.text + "'");
    }
    return v;
  }

  Vec3 offset() {
    expect("OFFSET");
    const double x = number();
    const double y = number();
    const double z = number();
    return {x, y, z};
  }

  void parse_joint(int parent) {
    const Token& name_tok = next();
    BvhJoint joint;
    joint.name = name_tok.text;
    joint.parent = parent;
    expect("{");
    joint.offset = offset();
    const int index = static_cast<int>(joints_.size());
    if (pos_ < tokens_.size() && tokens_[pos_].text == "CHANNELS") {
      ++pos_;
      const Token& count_tok = next();
      const int count = std::atoi(count_tok.text.c_str());
      if (count < 0 || count > 6) fail(count_tok.line, "bad channel count");
      for (int c = 0; c < count; ++c) {
        const Token& ct = next();
        if (ct.text == "Xposition") joint.channels.push_back(BvhChannel::kXpos);
        else if (ct.text == "Yposition") joint.channels.push_back(BvhChannel::kYpos);
        else if (ct.text == "Zposition") joint.channels.push_back(BvhChannel::kZpos);
        else if (ct.text == "Xrotation") joint.channels.push_back(BvhChannel::kXrot);
        else if (ct.text == "Yrotation") joint.channels.push_back(BvhChannel::kYrot);
        else if (ct.text == "Zrotation") joint.channels.push_back(BvhChannel::kZrot);
        else fail(ct.line, "unknown channel '" + ct.text + "'");
      }
    }
    joints_.push_back(std::move(joint));
    while (true) {
      const Token& t = next();
      if (t.text == "}") break;
      if (t.text == "JOINT") {
        parse_joint(index);
      } else if (t.text == "End") {
        expect("Site");
        expect("{");
        BvhJoint site;
        site.name = joints_[index].name + "_End";
        site.parent = index;
        site.offset = offset();
        site.end_site = true;
        expect("}");
        joints_.push_back(std::move(site));
      } else {
        fail(t.line, "unexpected token '" + t.text + "' in joint block");
      }
    }
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  std::vector<BvhJoint> joints_;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

BvhDocument parse_bvh(const std::string& text) {
  // Split the hierarchy from the motion section on the MOTION keyword.
  std::size_t motion_at = std::string::npos;
  {
    std::size_t search = 0;
    while ((search = text.find("MOTION", search)) != std::string::npos) {
      const bool left_ok = search == 0 || std::isspace(static_cast<unsigned char>(text[search - 1]));
      const std::size_t after = search + 6;
      const bool right_ok = after >= text.size() || std::isspace(static_cast<unsigned char>(text[after]));
      if (left_ok && right_ok) {
        motion_at = search;
        break;
      }
      search = after;
    }
  }
  int motion_line = 1;
  for (std::size_t i = 0; i < std::min(motion_at, text.size()); ++i) {
    if (text[i] == '\n') ++motion_line;
  }
  if (motion_at == std::string::npos) {
    throw BvhParseError(motion_line, "missing MOTION section");
  }

  BvhDocument doc;
  doc.joints = HierarchyParser(tokenize(text, 0, motion_at, 1)).parse();
  const int channels = doc.total_channels();

  std::istringstream body(text.substr(motion_at + 6));
  std::string line;
  int line_no = motion_line;
  auto next_nonempty = [&](std::string& out) {
    while (std::getline(body, line)) {
      ++line_no;
      out = trim(line);
      if (!out.empty()) return true;
    }
    return false;
  };
  // The remainder of the MOTION line itself counts as line motion_line.
  line_no = motion_line - 1;
  std::getline(body, line);
  ++line_no;
  if (!trim(line).empty()) throw BvhParseError(line_no, "unexpected text after MOTION");

  std::string s;
  if (!next_nonempty(s) || s.rfind("Frames:", 0) != 0) {
    throw BvhParseError(line_no, "expected 'Frames:'");
  }
  doc.frame_count = std::atoi(s.substr(7).c_str());
  if (doc.frame_count < 0) throw BvhParseError(line_no, "negative frame count");
  if (!next_nonempty(s) || s.rfind("Frame Time:", 0) != 0) {
    throw BvhParseError(line_no, "expected 'Frame Time:'");
  }
  doc.frame_time = std::strtod(s.substr(11).c_str(), nullptr);
  if (!(doc.frame_time > 0)) throw BvhParseError(line_no, "frame time must be positive");

  doc.frames.resize(doc.frame_count, channels);
  for (int f = 0; f < doc.frame_count; ++f) {
    if (!next_nonempty(s)) {
      throw BvhParseError(line_no, "expected " + std::to_string(doc.frame_count) +
                                       " frames, found " + std::to_string(f));
    }
    std::istringstream ls(s);
    int c = 0;
    std::string tok;
    while (ls >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') {
        throw BvhParseError(line_no, "bad number '" + tok + "'");
      }
      if (c >= channels) {
        throw BvhParseError(line_no, "channel count mismatch: more than " +
                                         std::to_string(channels) + " values");
      }
      doc.frames(f, c++) = v;
    }
    if (c != channels) {
      throw BvhParseError(line_no, "channel count mismatch: expected " +
                                       std::to_string(channels) + ", got " +
                                       std::to_string(c));
    }
  }
  return doc;
}

std::string write_bvh(const BvhDocument& doc) {
  std::ostringstream os;
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  const int n = static_cast<int>(doc.joints.size());
  std::vector<std::vector<int>> kids(n);
  for (int j = 1; j < n; ++j) kids[doc.joints[j].parent].push_back(j);

  os << "HIERARCHY\n";
  auto emit = [&](auto&& self, int j, int depth) -> void {
    const std::string pad(depth * 2, ' ');
    const BvhJoint& joint = doc.joints[j];
    const Vec3& o = joint.offset;
    if (joint.end_site) {
      os << pad << "End Site\n" << pad << "{\n";
      os << pad << "  OFFSET " << fmt(o.x()) << ' ' << fmt(o.y()) << ' ' << fmt(o.z()) << "\n";
      os << pad << "}\n";
      return;
    }
    os << pad << (j == 0 ? "ROOT " : "JOINT ") << joint.name << "\n" << pad << "{\n";
    os << pad << "  OFFSET " << fmt(o.x()) << ' ' << fmt(o.y()) << ' ' << fmt(o.z()) << "\n";
    if (!joint.channels.empty()) {
      os << pad << "  CHANNELS " << joint.channels.size();
      for (auto c : joint.channels) os << ' ' << channel_name(c);
      os << "\n";
    }
    for (int k : kids[j]) self(self, k, depth + 1);
    os << pad << "}\n";
  };
  if (n > 0) emit(emit, 0, 0);
  os << "MOTION\n";
  os << "Frames: " << doc.frame_count << "\n";
  std::snprintf(buf, sizeof(buf), "%.9g", doc.frame_time);
  os << "Frame Time: " << buf << "\n";
  for (int f = 0; f < doc.frame_count; ++f) {
    for (Eigen::Index c = 0; c < doc.frames.cols(); ++c) {
      if (c) os << ' ';
      os << fmt(doc.frames(f, c));
    }
    os << "\n";
  }
  return os.str();
}

BvhDocument load_bvh(const std::string& path) { return parse_bvh(read_text_file(path)); }

void save_bvh(const BvhDocument& doc, const std::string& path) {
  write_file_atomic(path, write_bvh(doc));
}

namespace {

Vec3 axis_of(BvhChannel c) {
  switch (c) {
    case BvhChannel::kXrot: return Vec3::UnitX();
    case BvhChannel::kYrot: return Vec3::UnitY();
    default: return Vec3::UnitZ();
  }
}

int axis_index(BvhChannel c) {
  switch (c) {
    case BvhChannel::kXrot: return 0;
    case BvhChannel::kYrot: return 1;
    default: return 2;
  }
}

}  // namespace

Mat3 euler_to_matrix(const std::vector<BvhChannel>& channels,
                     const std::vector<double>& radians) {
  Mat3 m = Mat3::Identity();
  std::size_t k = 0;
  for (auto c : channels) {
    if (!is_rotation(c)) continue;
    if (k >= radians.size()) throw Error("euler_to_matrix: too few angles");
    m = m * Eigen::AngleAxisd(radians[k++], axis_of(c)).toRotationMatrix();
  }
  return m;
}

std::vector<double> matrix_to_euler(const std::vector<BvhChannel>& rot_channels,
                                    const Mat3& m) {
  std::vector<BvhChannel> rots;
  for (auto c : rot_channels) {
    if (is_rotation(c)) rots.push_back(c);
  }
  if (rots.empty()) return {};
  if (rots.size() != 3 || axis_index(rots[0]) == axis_index(rots[1]) ||
      axis_index(rots[1]) == axis_index(rots[2]) ||
      axis_index(rots[0]) == axis_index(rots[2])) {
    throw Error("matrix_to_euler: need three distinct rotation axes");
  }
  const Vec3 e = m.eulerAngles(axis_index(rots[0]), axis_index(rots[1]),
                               axis_index(rots[2]));
  return {e[0], e[1], e[2]};
}

}  // namespace topodiff
