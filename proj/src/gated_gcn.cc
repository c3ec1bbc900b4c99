#include "qvad/gated_gcn.h"

#include "qvad/error.h"

namespace qvad {

GatedGcn::GatedGcn(ParamStore& store, const std::string& name, std::size_t input_dim,
                   std::size_t hidden_dim, std::size_t layers, bool global_readout, Rng& rng)
    : hidden_(hidden_dim), global_(global_readout) {
  proj_ = Linear(store, name + ".proj", input_dim, hidden_dim, rng);
  for (std::size_t l = 0; l < layers; ++l) {
    gcn_weights_.push_back(
        &store.add(name + ".gcn" + std::to_string(l), xavier_uniform(hidden_dim, hidden_dim, rng)));
  }
  node_cell_ = LstmCell(store, name + ".node_lstm", hidden_dim, hidden_dim, rng);
  if (global_) {
    global_cell_ = LstmCell(store, name + ".global_lstm", hidden_dim, hidden_dim, rng);
    pool_ = AttnPooling(store, name + ".pool", hidden_dim, rng);
  }
}

GatedGcnOutput GatedGcn::operator()(Var x, Var norm_adj) const {
  if (x.rows() == 0) throw ShapeError("gated_gcn: empty graph");
  Tape& t = *x.tape();
  const std::size_t n = x.rows();
  Var h = proj_(x);
  LstmState nodes{h, t.constant(Tensor({n, hidden_}))};
  LstmState global;
  if (global_) global = {pool_(h), t.constant(Tensor({1, hidden_}))};
  for (Parameter* w : gcn_weights_) {
    Var aggregated = gcn_layer(nodes.h, norm_adj, t.param(*w));
    nodes = node_cell_(aggregated, nodes);
    if (global_) global = global_cell_(pool_(nodes.h), global);
  }
  return {nodes.h, global.h};
}

}  // namespace qvad
