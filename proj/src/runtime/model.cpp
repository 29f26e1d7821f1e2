#include "wmmoe/runtime/model.hpp"

namespace wmmoe::runtime {

template <typename T>
WmMoeModel<T>::WmMoeModel(ParamStore<T>& store, const TrainConfig& config)
    : config_((config.validate(), config)),
      store_(&store),
      perception_(store, "perception", config.perception_config()),
      intention_(store, "memory/intention", config.memory_config()),
      language_(store, "memory/language", config.memory_config()),
      decision_(store, "decision", config.decision_config()) {}

template <typename T>
objectives::Forecast<T> WmMoeModel<T>::operator()(Tape<T>& tape, const perception::SceneBatch& batch,
                                                  ModelTrace<T>* trace) const {
  auto scene = perception_(tape, batch);
  auto q_mode = intention_(tape, scene.s_enc, scene.l_enc, scene.l_mask, scene.n_enc, scene.n_mask);
  auto lang = language_(tape, scene.t_enc, scene.n_enc, scene.n_mask);
  decision::DecisionTrace<T> dtrace;
  auto forecast = decision_(tape, q_mode, lang.t_llm, scene.v_enc, scene.t_enc, trace ? &dtrace : nullptr);
  if (trace != nullptr) {
    trace->scene = std::move(scene);
    trace->q_mode = q_mode;
    trace->lang = std::move(lang);
    trace->decision = std::move(dtrace);
  }
  return forecast;
}

template class WmMoeModel<float>;
template class WmMoeModel<double>;

}  // namespace wmmoe::runtime
