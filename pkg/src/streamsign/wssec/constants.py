"""Namespace URIs and algorithm identifiers used on the wire."""

import hashlib

from ..xmlcore import XmlName

NS_SOAP = "http://www.w3.org/2003/05/soap-envelope"
NS_DS = "http://www.w3.org/2000/09/xmldsig#"
NS_XENC = "http://www.w3.org/2001/04/xmlenc#"
NS_WSSE = "http://docs.oasis-open.org/wss/2004/01/oasis-200401-wss-wssecurity-secext-1.0.xsd"

SOAP_ENVELOPE = XmlName("Envelope", NS_SOAP, "env")
SOAP_HEADER = XmlName("Header", NS_SOAP, "env")
SOAP_BODY = XmlName("Body", NS_SOAP, "env")
WSSE_SECURITY = XmlName("Security", NS_WSSE, "wsse")

DS_SIGNATURE = XmlName("Signature", NS_DS, "ds")
DS_SIGNED_INFO = XmlName("SignedInfo", NS_DS, "ds")
DS_C14N_METHOD = XmlName("CanonicalizationMethod", NS_DS, "ds")
DS_SIGNATURE_METHOD = XmlName("SignatureMethod", NS_DS, "ds")
DS_REFERENCE = XmlName("Reference", NS_DS, "ds")
DS_DIGEST_METHOD = XmlName("DigestMethod", NS_DS, "ds")
DS_DIGEST_VALUE = XmlName("DigestValue", NS_DS, "ds")
DS_SIGNATURE_VALUE = XmlName("SignatureValue", NS_DS, "ds")
DS_KEY_INFO = XmlName("KeyInfo", NS_DS, "ds")
DS_KEY_NAME = XmlName("KeyName", NS_DS, "ds")

XENC_ENCRYPTED_DATA = XmlName("EncryptedData", NS_XENC, "xenc")
XENC_ENCRYPTION_METHOD = XmlName("EncryptionMethod", NS_XENC, "xenc")
XENC_CIPHER_DATA = XmlName("CipherData", NS_XENC, "xenc")
XENC_CIPHER_VALUE = XmlName("CipherValue", NS_XENC, "xenc")

ATTR_URI = XmlName("URI")
ATTR_ALGORITHM = XmlName("Algorithm")

ALG_SHA256 = "http://www.w3.org/2001/04/xmlenc#sha256"
ALG_SHA384 = "http://www.w3.org/2001/04/xmldsig-more#sha384"
ALG_SHA512 = "http://www.w3.org/2001/04/xmlenc#sha512"
ALG_RSA_SHA256 = "http://www.w3.org/2001/04/xmldsig-more#rsa-sha256"
ALG_AES256_GCM = "http://www.w3.org/2009/xmlenc11#aes256-gcm"
# Not Exclusive C14N: the restricted canonical form from streamsign.xmlcore.
ALG_C14N_RESTRICTED = "urn:streamsign:c14n-restricted-1.0"

DIGEST_ALGORITHMS = {
    ALG_SHA256: hashlib.sha256,
    ALG_SHA384: hashlib.sha384,
    ALG_SHA512: hashlib.sha512,
}

DIGEST_SIZES = {
    ALG_SHA256: 32,
    ALG_SHA384: 48,
    ALG_SHA512: 64,
}

ENVELOPE_REFERENCE_URI = "#envelope"
