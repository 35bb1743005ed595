export { Binding, start } from './binding.js';
export type { BindingConfig } from './binding.js';
export { BoundChannel, ChannelError, chareId } from './channel.js';
export type { ChareId } from './channel.js';
export {
  CopyCostModel,
  DeviceArena,
  DeviceBuffer,
  DeviceError,
  asRegion,
  region,
} from './devicesim.js';
export type { CopyCostSpec, DeviceRegion } from './devicesim.js';
export { DIR_AB, DIR_BA, pattern } from './pattern.js';
export { A_ID, B_ID, playSideA, runScript } from './script.js';
export type { ChannelScript, Op, TranscriptRecord } from './script.js';
export {
  DEFAULT_LAYOUT,
  FULL_MASK,
  KIND_CHANNEL,
  KIND_DEVICE,
  KIND_EAGER,
  KIND_PROBE,
  TagError,
  TagLayout,
  fnv1a64,
} from './tags.js';
export type { DecodedTag, TagLayoutSpec } from './tags.js';
export { OK, TRANSPORT_ERROR, TRUNCATED, WireWorker } from './worker.js';
export type { Completion, WorkerOptions } from './worker.js';
export {
  FRAME_EAGER,
  FRAME_PAYLOAD,
  FRAME_PULL,
  FRAME_RTS,
  WireError,
  encodeFrame,
  encodeHello,
  parseFrameHeader,
  parseHello,
} from './wire.js';
export type { FrameHeader, Hello } from './wire.js';
