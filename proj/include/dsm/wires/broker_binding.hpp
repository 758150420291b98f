#pragma once

#include "dsm/broker/core.hpp"
#include "dsm/wires/stages.hpp"

namespace dsm::wires {

/// Context whose subscribe/publish go straight to an in-process broker core.
inline PipelineContext broker_context(broker::BrokerCore &core) {
  PipelineContext ctx;
  ctx.subscribe = [&core](const std::string &filter, MessageFn fn) { return core.local_subscribe(filter, std::move(fn)); };
  ctx.unsubscribe = [&core](int id) { core.local_unsubscribe(id); };
  ctx.publish = [&core](const std::string &topic, const std::string &payload, int qos) {
    core.publish(broker::local_publisher, topic, payload, static_cast<std::uint8_t>(qos > 0 ? 1 : 0));
  };
  return ctx;
}

} // namespace dsm::wires
