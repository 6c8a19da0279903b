#pragma once

// Checks a JSON document against the subset of JSON Schema used by the
// shipped schemas: type, const, enum, required, properties,
// additionalProperties, items, minItems, minimum, maximum,
// exclusiveMinimum, pattern and local $ref.

#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

namespace infip::testing {

class SchemaChecker {
 public:
  explicit SchemaChecker(nlohmann::json schema) : root_(std::move(schema)) {}

  std::vector<std::string> errors(const nlohmann::json& doc) const {
    std::vector<std::string> out;
    check(root_, doc, "$", out);
    return out;
  }

 private:
  const nlohmann::json& resolve(const nlohmann::json& s) const {
    if (!s.contains("$ref")) return s;
    const std::string ref = s["$ref"];
    return root_.at(nlohmann::json::json_pointer(ref.substr(1)));
  }

  static bool has_type(const nlohmann::json& v, const std::string& type) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "number") return v.is_number();
    if (type == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()));
    if (type == "boolean") return v.is_boolean();
    if (type == "null") return v.is_null();
    return false;
  }

  void check(const nlohmann::json& schema, const nlohmann::json& v, const std::string& at, std::vector<std::string>& out) const {
    const nlohmann::json& s = resolve(schema);
    auto fail = [&](const std::string& what) { out.push_back(at + ": " + what); };
    if (s.contains("type") && !has_type(v, s["type"])) return fail("expected " + s["type"].get<std::string>());
    if (s.contains("const") && v != s["const"]) fail("expected constant " + s["const"].dump());
    if (s.contains("enum") && std::find(s["enum"].begin(), s["enum"].end(), v) == s["enum"].end()) fail("value not in enum");
    if (v.is_number()) {
      const double x = v.get<double>();
      if (s.contains("minimum") && x < s["minimum"].get<double>()) fail("below minimum");
      if (s.contains("maximum") && x > s["maximum"].get<double>()) fail("above maximum");
      if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) fail("not above exclusive minimum");
    }
    if (v.is_string() && s.contains("pattern") && !std::regex_search(v.get<std::string>(), std::regex(s["pattern"].get<std::string>())))
      fail("does not match pattern");
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) fail("too few items");
      if (s.contains("items"))
        for (std::size_t i = 0; i < v.size(); ++i) check(s["items"], v[i], at + "[" + std::to_string(i) + "]", out);
    }
    if (v.is_object()) {
      if (s.contains("required"))
        for (const auto& k : s["required"])
          if (!v.contains(k.get<std::string>())) fail("missing " + k.get<std::string>());
      const auto props = s.value("properties", nlohmann::json::object());
      for (const auto& [k, child] : v.items()) {
        if (props.contains(k))
          check(props[k], child, at + "." + k, out);
        else if (s.contains("additionalProperties") && s["additionalProperties"] == false)
          fail("unexpected property " + k);
      }
    }
  }

  nlohmann::json root_;
};

}  // namespace infip::testing
