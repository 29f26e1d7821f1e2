#pragma once

#include <memory>

#include "wmmoe/runtime/config.hpp"

namespace wmmoe::runtime {

using nd::Array;
using nd::Index;
using nd::ParamStore;
using nd::Tape;
using nd::Var;

template <typename T>
struct ModelTrace {
  perception::SceneEncoding<T> scene;
  Var<T> q_mode;
  memory::LangFeatures<T> lang;
  decision::DecisionTrace<T> decision;
};

/// Perception -> memory (intention queries and language features) -> decision.
template <typename T>
class WmMoeModel {
 public:
  WmMoeModel(ParamStore<T>& store, const TrainConfig& config);

  objectives::Forecast<T> operator()(Tape<T>& tape, const perception::SceneBatch& batch,
                                     ModelTrace<T>* trace = nullptr) const;

  const TrainConfig& config() const { return config_; }
  ParamStore<T>& store() const { return *store_; }

 private:
  TrainConfig config_;
  ParamStore<T>* store_;
  perception::PerceptionEncoder<T> perception_;
  memory::IntentionEncoder<T> intention_;
  memory::LanguageEncoder<T> language_;
  decision::DecisionModule<T> decision_;
};

extern template class WmMoeModel<float>;
extern template class WmMoeModel<double>;

}  // namespace wmmoe::runtime
