#pragma once

// Graph description files.
//
//   {
//     "nodes": [
//       {"id": "x",    "kind": "parameter", "params": {"shape": [1, 1]}},
//       {"id": "zero", "kind": "input"},
//       {"id": "s",    "kind": "func", "inputs": ["x"], "params": {"func": "sin", "delta": 1.0}},
//       {"id": "E",    "kind": "loss", "inputs": ["s", "zero"],
//        "params": {"loss": "square", "weight": 2.0}}
//     ],
//     "bindings": {"x": [[0.5]], "zero": [[0.0]]}
//   }
//
// kind: input | parameter | plus | elem_mul | matmul | conv | func | loss
// params.func: sigmoid | tanh | relu | sin | square    (func only)
// params.delta: scale factor in (0, 1], default 1       (func only)
// params.loss: square | absolute | cross_entropy       (loss only)
// params.weight: positive multiplier, default 1        (loss only)
// params.shape: [rows, cols], optional                 (input/parameter only)
//
// Nodes may be listed in any order; they are sorted topologically on load.
// Unknown kinds, unknown keys and cycles are rejected.

#include <filesystem>
#include <string>
#include <string_view>

#include "convexcert/graph.hpp"

namespace convexcert {

class GraphFormatError : public GraphError {
 public:
  using GraphError::GraphError;
};

struct GraphDocument {
  Graph graph;
  Bindings bindings;
};

GraphDocument parse_graph_json(std::string_view text);
GraphDocument load_graph_file(const std::filesystem::path& path);

std::string graph_to_json(const Graph& g, const Bindings& bindings = {});

}  // namespace convexcert
