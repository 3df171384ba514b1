#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

namespace circuitscope {

// %.17g round-trips every finite double. Non-finite values have no JSON
// representation; they serialize as null (callers flag such cases upstream,
// e.g. the excluded-normalization path).
inline std::string fmt_double(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  return out;
}

// Minimal write-only JSON tree with insertion-ordered keys. Artifacts must be
// byte-identical across reruns, so serialization is fully deterministic:
// fixed key order (insertion), fixed float format, no whitespace.
class Json {
 public:
  Json() : kind_(Kind::Null) {}
  Json(std::nullptr_t) : kind_(Kind::Null) {}
  Json(bool b) : kind_(Kind::Bool), b_(b) {}
  Json(int v) : kind_(Kind::Int), i_(v) {}
  Json(long v) : kind_(Kind::Int), i_(v) {}
  Json(long long v) : kind_(Kind::Int), i_(v) {}
  Json(unsigned v) : kind_(Kind::Uint), u_(v) {}
  Json(unsigned long v) : kind_(Kind::Uint), u_(v) {}
  Json(unsigned long long v) : kind_(Kind::Uint), u_(v) {}
  Json(double v) : kind_(Kind::Double), d_(v) {}
  Json(const char* s) : kind_(Kind::Str), s_(s) {}
  Json(std::string s) : kind_(Kind::Str), s_(std::move(s)) {}

  static Json object() {
    Json j;
    j.kind_ = Kind::Obj;
    return j;
  }
  static Json array() {
    Json j;
    j.kind_ = Kind::Arr;
    return j;
  }

  Json& set(std::string key, Json v) {
    obj_.emplace_back(std::move(key), std::move(v));
    return *this;
  }
  Json& push(Json v) {
    arr_.push_back(std::move(v));
    return *this;
  }

  std::string dump() const {
    std::string out;
    dump_to(out);
    return out;
  }

 private:
  enum class Kind { Null, Bool, Int, Uint, Double, Str, Obj, Arr };

  void dump_to(std::string& out) const {
    switch (kind_) {
      case Kind::Null: out += "null"; break;
      case Kind::Bool: out += b_ ? "true" : "false"; break;
      case Kind::Int: out += std::to_string(i_); break;
      case Kind::Uint: out += std::to_string(u_); break;
      case Kind::Double: out += fmt_double(d_); break;
      case Kind::Str:
        out += '"';
        out += json_escape(s_);
        out += '"';
        break;
      case Kind::Obj: {
        out += '{';
        bool first = true;
        for (const auto& [k, v] : obj_) {
          if (!first) out += ',';
          first = false;
          out += '"';
          out += json_escape(k);
          out += "\":";
          v.dump_to(out);
        }
        out += '}';
        break;
      }
      case Kind::Arr: {
        out += '[';
        bool first = true;
        for (const auto& v : arr_) {
          if (!first) out += ',';
          first = false;
          v.dump_to(out);
        }
        out += ']';
        break;
      }
    }
  }

  Kind kind_;
  bool b_ = false;
  long long i_ = 0;
  unsigned long long u_ = 0;
  double d_ = 0;
  std::string s_;
  std::vector<std::pair<std::string, Json>> obj_;
  std::vector<Json> arr_;
};

inline Json json_vector(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push(x);
  return a;
}

}  // namespace circuitscope
