#pragma once

#include <string>
#include <vector>

#include "qvad/nn.h"

namespace qvad {

struct GatedGcnOutput {
  Var nodes;   // H^L, [n x hidden]
  Var global;  // g^L, [1 x hidden]; invalid when the readout is disabled
};

// Graph encoder that alternates GCN aggregation with LSTM gating across
// layers, plus an optional gated attentive-pooling readout:
//
//   H~ = GCN(H, adj);  H = LSTM(H~, H)            (row-wise, shared cell)
//   g~ = AttnPooling(H);  g = LSTM(g~, g)
//
// Inputs are projected to the hidden size first. Cell states start at zero
// and g^0 pools the projected inputs.
class GatedGcn {
 public:
  GatedGcn() = default;
  GatedGcn(ParamStore& store, const std::string& name, std::size_t input_dim,
           std::size_t hidden_dim, std::size_t layers, bool global_readout, Rng& rng);

  GatedGcnOutput operator()(Var x, Var norm_adj) const;

  std::size_t layers() const { return gcn_weights_.size(); }
  const AttnPooling& pooling() const { return pool_; }

 private:
  Linear proj_;
  std::vector<Parameter*> gcn_weights_;
  LstmCell node_cell_;
  LstmCell global_cell_;
  AttnPooling pool_;
  std::size_t hidden_ = 0;
  bool global_ = false;
};

}  // namespace qvad
