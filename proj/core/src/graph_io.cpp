#include "convexcert/graph_io.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace convexcert {

using nlohmann::json;

namespace {

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw GraphFormatError(what + ": expected a non-empty array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  std::vector<double> data;
  for (const auto& row : j) {
    if (!row.is_array()) throw GraphFormatError(what + ": rows must be arrays");
    if (cols == 0) cols = row.size();
    if (row.size() != cols || cols == 0) throw GraphFormatError(what + ": ragged or empty rows");
    for (const auto& v : row) {
      if (!v.is_number()) throw GraphFormatError(what + ": entries must be numbers");
      data.push_back(v.get<double>());
    }
  }
  return Matrix(rows, cols, std::move(data));
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.contains(key)) throw GraphFormatError(where + ": unknown key '" + key + "'");
}

struct RawNode {
  Node node;
  std::vector<std::string> inputs;
};

RawNode parse_node(const json& j) {
  if (!j.is_object()) throw GraphFormatError("node entries must be objects");
  reject_unknown_keys(j, {"id", "kind", "inputs", "params"}, "node");
  if (!j.contains("id") || !j["id"].is_string()) throw GraphFormatError("node without string 'id'");
  RawNode raw;
  raw.node.name = j["id"].get<std::string>();
  const std::string where = "node '" + raw.node.name + "'";
  if (!j.contains("kind") || !j["kind"].is_string()) throw GraphFormatError(where + ": missing 'kind'");
  const auto kind = node_kind_from_string(j["kind"].get<std::string>());
  if (!kind) throw GraphFormatError(where + ": unknown kind '" + j["kind"].get<std::string>() + "'");
  raw.node.kind = *kind;

  if (j.contains("inputs")) {
    if (!j["inputs"].is_array()) throw GraphFormatError(where + ": 'inputs' must be an array");
    for (const auto& in : j["inputs"]) {
      if (!in.is_string()) throw GraphFormatError(where + ": input ids must be strings");
      raw.inputs.push_back(in.get<std::string>());
    }
  }

  const json params = j.value("params", json::object());
  if (!params.is_object()) throw GraphFormatError(where + ": 'params' must be an object");
  switch (raw.node.kind) {
    case NodeKind::Input:
    case NodeKind::Parameter:
      reject_unknown_keys(params, {"shape"}, where);
      if (params.contains("shape")) {
        const auto& s = params["shape"];
        if (!s.is_array() || s.size() != 2 || !s[0].is_number_unsigned() || !s[1].is_number_unsigned() ||
            s[0].get<std::size_t>() == 0 || s[1].get<std::size_t>() == 0) {
          throw GraphFormatError(where + ": 'shape' must be [rows, cols] of positive integers");
        }
        raw.node.shape = std::make_pair(s[0].get<std::size_t>(), s[1].get<std::size_t>());
      }
      break;
    case NodeKind::Func: {
      reject_unknown_keys(params, {"func", "delta"}, where);
      if (!params.contains("func") || !params["func"].is_string()) throw GraphFormatError(where + ": missing 'func'");
      const auto f = function_from_string(params["func"].get<std::string>());
      if (!f) throw GraphFormatError(where + ": unknown function '" + params["func"].get<std::string>() + "'");
      raw.node.func = *f;
      if (params.contains("delta")) {
        if (!params["delta"].is_number()) throw GraphFormatError(where + ": 'delta' must be a number");
        raw.node.delta = params["delta"].get<double>();
      }
      break;
    }
    case NodeKind::Loss: {
      reject_unknown_keys(params, {"loss", "weight"}, where);
      if (!params.contains("loss") || !params["loss"].is_string()) throw GraphFormatError(where + ": missing 'loss'");
      const auto l = loss_from_string(params["loss"].get<std::string>());
      if (!l) throw GraphFormatError(where + ": unknown loss '" + params["loss"].get<std::string>() + "'");
      raw.node.loss = *l;
      if (params.contains("weight")) {
        if (!params["weight"].is_number()) throw GraphFormatError(where + ": 'weight' must be a number");
        raw.node.loss_weight = params["weight"].get<double>();
      }
      break;
    }
    default:
      reject_unknown_keys(params, {}, where);
      break;
  }
  return raw;
}

}  // namespace

GraphDocument parse_graph_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw GraphFormatError(std::string("malformed graph JSON: ") + e.what());
  }
  if (!doc.is_object()) throw GraphFormatError("graph document must be an object");
  reject_unknown_keys(doc, {"nodes", "bindings", "description"}, "graph document");
  if (!doc.contains("nodes") || !doc["nodes"].is_array()) throw GraphFormatError("graph document needs a 'nodes' array");

  std::vector<RawNode> raw;
  std::map<std::string, std::size_t> by_name;
  for (const auto& j : doc["nodes"]) {
    raw.push_back(parse_node(j));
    if (!by_name.emplace(raw.back().node.name, raw.size() - 1).second) {
      throw GraphFormatError("duplicate node id '" + raw.back().node.name + "'");
    }
  }
  for (const auto& r : raw)
    for (const auto& in : r.inputs)
      if (!by_name.contains(in)) {
        throw GraphFormatError("node '" + r.node.name + "' references unknown input '" + in + "'");
      }

  // Kahn's algorithm, ties broken by file order.
  std::vector<std::size_t> pending(raw.size());
  std::vector<std::vector<std::size_t>> users(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    pending[i] = raw[i].inputs.size();
    for (const auto& in : raw[i].inputs) users[by_name.at(in)].push_back(i);
  }
  std::set<std::size_t> ready;
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (pending[i] == 0) ready.insert(i);

  GraphBuilder builder;
  std::map<std::string, NodeId> ids;
  while (!ready.empty()) {
    const std::size_t i = *ready.begin();
    ready.erase(ready.begin());
    Node n = raw[i].node;
    for (const auto& in : raw[i].inputs) n.inputs.push_back(ids.at(in));
    const std::string name = n.name;
    ids[name] = builder.add(std::move(n));
    for (std::size_t u : users[i])
      if (--pending[u] == 0) ready.insert(u);
  }
  if (ids.size() != raw.size()) throw GraphFormatError("graph contains a cycle");

  GraphDocument out{builder.build(), {}};
  if (doc.contains("bindings")) {
    if (!doc["bindings"].is_object()) throw GraphFormatError("'bindings' must be an object");
    for (const auto& [name, value] : doc["bindings"].items()) {
      const auto id = out.graph.find(name);
      if (!id) throw GraphFormatError("binding for unknown node '" + name + "'");
      const NodeKind k = out.graph.node(*id).kind;
      if (k != NodeKind::Input && k != NodeKind::Parameter) {
        throw GraphFormatError("binding for non-leaf node '" + name + "'");
      }
      out.bindings[name] = matrix_from_json(value, "binding '" + name + "'");
    }
  }
  return out;
}

GraphDocument load_graph_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GraphFormatError("cannot open graph file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_graph_json(ss.str());
}

std::string graph_to_json(const Graph& g, const Bindings& bindings) {
  json nodes = json::array();
  for (const Node& n : g.nodes()) {
    json j;
    j["id"] = n.name;
    j["kind"] = std::string(to_string(n.kind));
    json inputs = json::array();
    for (NodeId in : n.inputs) inputs.push_back(g.node(in).name);
    j["inputs"] = inputs;
    json params = json::object();
    switch (n.kind) {
      case NodeKind::Input:
      case NodeKind::Parameter:
        if (n.shape) params["shape"] = {n.shape->first, n.shape->second};
        break;
      case NodeKind::Func:
        params["func"] = std::string(to_string(n.func));
        params["delta"] = n.delta;
        break;
      case NodeKind::Loss:
        params["loss"] = std::string(to_string(n.loss));
        params["weight"] = n.loss_weight;
        break;
      default: break;
    }
    j["params"] = params;
    nodes.push_back(std::move(j));
  }
  json doc;
  doc["nodes"] = nodes;
  if (!bindings.empty()) {
    json b = json::object();
    for (const auto& [name, m] : bindings) b[name] = matrix_to_json(m);
    doc["bindings"] = b;
  }
  return doc.dump(2);
}

}  // namespace convexcert
