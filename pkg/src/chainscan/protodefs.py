"""Message classes for the serialized graph formats.

The vendored .proto schemas under protos/ are compiled into a
FileDescriptorSet (see scripts/gen_protos.py); this module loads that
set into a private descriptor pool and materialises the message classes.
Using a private pool keeps the scanner independent of any other protobuf
registrations in the process (notably a co-imported TensorFlow).
"""

from importlib import resources

from google.protobuf import descriptor_pb2, descriptor_pool, message_factory

_POOL = descriptor_pool.DescriptorPool()


def _load_pool() -> None:
    data = resources.files("chainscan.data").joinpath("graph_protos.dset").read_bytes()
    fds = descriptor_pb2.FileDescriptorSet()
    fds.ParseFromString(data)
    pending = list(fds.file)
    added: set[str] = set()
    while pending:
        progressed = False
        for f in list(pending):
            if all(dep in added for dep in f.dependency):
                _POOL.Add(f)
                added.add(f.name)
                pending.remove(f)
                progressed = True
        if not progressed:
            missing = [f.name for f in pending]
            raise RuntimeError(f"unresolvable proto dependencies: {missing}")


_load_pool()


def _cls(full_name: str):
    return message_factory.GetMessageClass(_POOL.FindMessageTypeByName(full_name))


SavedModel = _cls("chainscan.tf.SavedModel")
MetaGraphDef = _cls("chainscan.tf.MetaGraphDef")
SignatureDef = _cls("chainscan.tf.SignatureDef")
TensorInfo = _cls("chainscan.tf.TensorInfo")
GraphDef = _cls("chainscan.tf.GraphDef")
NodeDef = _cls("chainscan.tf.NodeDef")
AttrValueProto = _cls("chainscan.tf.AttrValue")
NameAttrList = _cls("chainscan.tf.NameAttrList")
FunctionDefLibrary = _cls("chainscan.tf.FunctionDefLibrary")
FunctionDef = _cls("chainscan.tf.FunctionDef")
OpDef = _cls("chainscan.tf.OpDef")
TensorProto = _cls("chainscan.tf.TensorProto")
TensorShapeProto = _cls("chainscan.tf.TensorShapeProto")
VersionDef = _cls("chainscan.tf.VersionDef")

DT_STRING = 7
